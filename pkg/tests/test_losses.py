import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsde_ml.approximators import LinearFamily, MlpBN, ZeroFn
from bsde_ml.losses import (
    cost_to_go,
    deep_bsde_loss,
    martingale_loss,
    measurability_loss,
    y0_estimate,
    zerr_mc,
    yerr_mc,
)
from bsde_ml.problems import example1_problem, example1_true_y, example1_true_z
from bsde_ml.sde import NoiseScheme, TrajectoryBatch, make_grid, simulate_model_based


def _example1(n=1, paths=64, steps=50, seed=0, T=0.5):
    prob = example1_problem(n, T)
    return simulate_model_based(prob.model, NoiseScheme("model-based", 1.0), ZeroFn(n, 0), prob.cost,
                                make_grid(T, steps), prob.x0, n_paths=paths, seed=seed)


@pytest.mark.parametrize("n", [1, 3])
def test_y0_telescopes_to_quadratic_variation(n):
    # with the true Z, y0 = sum |dW|^2 - n T exactly
    batch = _example1(n=n)
    y0 = y0_estimate(batch, LinearFamily("z_well", n, 1.0)).y0
    expected = np.sum(batch.dw**2, axis=(1, 2)) - n * 0.5
    np.testing.assert_allclose(y0, expected, atol=1e-12)
    loss = measurability_loss(batch, LinearFamily("z_well", n, 1.0)).loss
    assert loss == pytest.approx(np.var(np.sum(batch.dw**2, axis=(1, 2))), rel=1e-10)


def test_measurability_needs_two_paths():
    batch = _example1(paths=1)
    with pytest.raises(ValueError):
        measurability_loss(batch, LinearFamily("z_well", 1, 1.0))
    # deep bsde accepts a single path
    assert np.isfinite(deep_bsde_loss(batch, LinearFamily("z_well", 1, 1.0), 0.0).loss)


def test_dimension_mismatch():
    batch = _example1(n=2)
    with pytest.raises(ValueError):
        measurability_loss(batch, LinearFamily("z_well", 1, 1.0))
    with pytest.raises(ValueError):
        martingale_loss(batch, LinearFamily("z_well", 2, 1.0))


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-3, 3), st.integers(0, 10_000))
def test_deep_bsde_decomposition(theta, y0_db, seed):
    batch = _example1(paths=16, steps=20, seed=seed)
    z = LinearFamily("z_mis", 1, theta)
    y0 = y0_estimate(batch, z).y0
    lhs = deep_bsde_loss(batch, z, y0_db).loss
    rhs = (y0_db - y0.mean()) ** 2 + measurability_loss(batch, z).loss
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_deep_bsde_optimal_offset_is_batch_mean():
    batch = _example1()
    z = LinearFamily("z_mis", 1, 0.3)
    m = y0_estimate(batch, z).y0.mean()
    rep = deep_bsde_loss(batch, z, m)
    assert abs(rep.grad_y0) < 1e-12
    assert rep.loss == pytest.approx(measurability_loss(batch, z).loss, rel=1e-12)
    assert deep_bsde_loss(batch, z, m + 0.1).loss > rep.loss


def test_measurability_translation_invariant():
    batch = _example1()
    shifted = TrajectoryBatch(batch.grid, batch.states, batch.dw, batch.controls, batch.running_costs + 3.0,
                              batch.terminal_costs - 7.0)
    z = MlpBN(1, 1, seed=2)
    a = measurability_loss(batch, z.copy())
    b = measurability_loss(shifted, z.copy())
    assert a.loss == pytest.approx(b.loss, rel=1e-10)
    np.testing.assert_allclose(a.grad, b.grad, rtol=1e-8, atol=1e-12)


def test_cost_to_go_shape_and_values():
    batch = _example1(n=2, paths=3, steps=5)
    ctg = cost_to_go(batch)
    assert ctg.shape == (3, 6)
    np.testing.assert_allclose(ctg[:, -1], batch.terminal_costs)
    # running cost -n each step: ctg_k = phi + (-2)(H - k) dt
    np.testing.assert_allclose(ctg[:, 0], batch.terminal_costs - 2 * 0.5, rtol=1e-12)
    np.testing.assert_allclose(np.diff(ctg, axis=1), 2 * 0.1, rtol=1e-12)


def test_martingale_loss_least_squares_minimizer():
    batch = _example1(n=1, paths=128)
    t, x = batch.time_points()
    basis = LinearFamily("y_mis", 1, 1.0).forward(t, x)[:, 0]
    target = cost_to_go(batch)[:, :-1].reshape(-1)
    theta_ls = float(basis @ target / (basis @ basis))
    best = martingale_loss(batch, LinearFamily("y_mis", 1, theta_ls))
    assert abs(best.grad[0]) < 1e-9 * max(1.0, best.loss)
    for d in (-0.05, 0.05):
        assert martingale_loss(batch, LinearFamily("y_mis", 1, theta_ls + d)).loss > best.loss


def test_error_criteria_vanish_at_truth():
    batch = _example1(n=2)
    assert zerr_mc(batch, LinearFamily("z_well", 2, 1.0), example1_true_z) == pytest.approx(0.0, abs=1e-24)
    assert yerr_mc(batch, LinearFamily("y_well", 2, 1.0), example1_true_y) == pytest.approx(0.0, abs=1e-24)
    # theta = 0: Zerr is sum 4|X|^2 dt
    expected = np.mean(np.sum(4 * batch.states[:, :-1] ** 2, axis=(1, 2)) * batch.grid.dt)
    assert zerr_mc(batch, LinearFamily("z_well", 2, 0.0), example1_true_z) == pytest.approx(expected)


def test_frozen_measurability_value():
    # regression value from a fixed seed
    batch = _example1(n=1, paths=32, steps=50, seed=123)
    loss = measurability_loss(batch, LinearFamily("z_mis", 1, 0.5)).loss
    assert loss == pytest.approx(FROZEN_MEAS, rel=1e-12)


FROZEN_MEAS = 0.21388526786922665
