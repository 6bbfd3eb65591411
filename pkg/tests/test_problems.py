import numpy as np
import pytest

from bsde_ml.approximators import LinearFamily, ZeroFn
from bsde_ml.losses import zerr_samples
from bsde_ml.problems import (
    CostSpec,
    example1_problem,
    example1_true_solution,
    example1_true_z,
    example1_yerr,
    example1_zerr,
    make_problem,
    pendulum_cost,
    pendulum_problem,
    running_cost,
    theta_star_y,
    theta_star_z,
)
from bsde_ml.sde import NoiseScheme, make_grid, simulate_model_based


def test_cost_spec_rejects_indefinite_r():
    with pytest.raises(ValueError):
        CostSpec(lambda x: 0 * x[:, 0], lambda t, x: 0 * t, np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValueError):
        CostSpec(lambda x: 0 * x[:, 0], lambda t, x: 0 * t, np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_running_cost_values():
    cost = pendulum_cost()
    assert running_cost(cost, 0.3, [0.0, 0.0], [0.0]) == 0.0
    assert running_cost(cost, 0.3, [1.0, 0.0], [0.0]) == pytest.approx(1.01)
    assert running_cost(cost, 0.3, [0.0, 1.0], [0.0]) == pytest.approx(0.01)
    assert running_cost(cost, 0.3, [0.0, 0.0], [2.0]) == pytest.approx(0.5 * 0.005 * 4)
    np.testing.assert_array_equal(cost.terminal(np.random.default_rng(0).normal(size=(5, 2))), 0.0)
    with pytest.raises(ValueError):
        running_cost(cost, 0.0, [0.0, 0.0], [1.0, 2.0])


def test_example1_running_cost_ignores_control():
    prob = example1_problem(n=4)
    assert running_cost(prob.cost, 0.1, np.ones(4), np.zeros(0)) == -4.0


def test_pendulum_dynamics():
    model = pendulum_problem().model
    x = np.array([[np.pi, 0.0], [0.5, -1.0]])
    t = np.zeros(2)
    F = model.drift(t, x)
    np.testing.assert_allclose(F[0], [0.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(F[1], [-1.0, 9.8 * np.sin(0.5) + 0.1])
    G = model.gain(t, x)
    np.testing.assert_allclose(G[:, :, 0], [[0.0, -1.0], [0.0, np.cos(0.5)]])


def test_pendulum_gain_vanishes_at_quarter_turn():
    G = pendulum_problem().model.gain(np.zeros(1), np.array([[np.pi / 2, 3.0]]))
    assert abs(G[0, 1, 0]) == abs(np.cos(np.pi / 2))
    assert abs(G[0, 1, 0]) < 1e-16


def test_true_solution():
    assert example1_true_solution(0.0, np.zeros(3))[0] == 0.0
    y, z = example1_true_solution(0.2, np.array([1.0, 1.0]))
    assert y == 2.0
    np.testing.assert_array_equal(z, [2.0, 2.0])


def test_true_solution_matches_conditional_expectation():
    # E[|W_T|^2 - n (T - t) | W_t = x] by brute force
    n, T, t = 2, 0.5, 0.2
    x = np.array([0.3, -0.7])
    rng = np.random.default_rng(0)
    N = 100_000
    samples = np.sum((x + rng.standard_normal((N, n)) * np.sqrt(T - t)) ** 2, axis=1) - n * (T - t)
    se = samples.std() / np.sqrt(N)
    assert abs(samples.mean() - example1_true_solution(t, x)[0]) < 3 * se


def test_zerr_closed_form_values():
    assert example1_zerr(0.0, 1, 0.5) == pytest.approx(0.5)
    assert theta_star_z(1, 0.5) == pytest.approx(0.266666666666, rel=1e-9)
    assert theta_star_y(1, 0.5) == pytest.approx(0.357142857142, rel=1e-9)


def _vertex(f):
    # both criteria are quadratics in theta: vertex from three evaluations
    f0, f1, f2 = f(0.0), f(1.0), f(2.0)
    curv = f2 - 2 * f1 + f0
    return -(f1 - f0 - curv / 2) / curv


@pytest.mark.parametrize("n", [1, 10, 100])
def test_closed_form_minimizers(n):
    T = 0.5
    assert _vertex(lambda th: example1_zerr(th, n, T)) == pytest.approx(theta_star_z(n, T), abs=1e-10)
    assert _vertex(lambda th: example1_yerr(th, n, T)) == pytest.approx(theta_star_y(n, T), abs=1e-10)
    # and they are minima
    for th in (theta_star_z(n, T) + 1e-3, theta_star_z(n, T) - 1e-3):
        assert example1_zerr(th, n, T) > example1_zerr(theta_star_z(n, T), n, T)


@pytest.mark.parametrize("theta", [0.0, 0.25, 0.5])
def test_misspecified_zerr_monte_carlo(theta):
    n, T = 1, 0.5
    grid = make_grid(T, 500)
    prob = example1_problem(n, T)
    batch = simulate_model_based(prob.model, NoiseScheme("model-based", 1.0), ZeroFn(n, 0), prob.cost,
                                 grid, prob.x0, n_paths=2000, seed=7)
    samples = zerr_samples(batch, LinearFamily("z_mis", n, theta), example1_true_z)
    se = samples.std(ddof=1) / np.sqrt(len(samples))
    assert abs(samples.mean() - example1_zerr(theta, n, T)) < 3 * se


def test_make_problem_by_name():
    assert make_problem("example1", n=3).model.dim_x == 3
    prob = make_problem("pendulum", weights=(2.0, 0.5))
    assert running_cost(prob.cost, 0.0, [1.0, 1.0], [0.0]) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        make_problem("cartpole")
