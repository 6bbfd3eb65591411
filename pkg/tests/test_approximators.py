import numpy as np
import pytest

from bsde_ml.approximators import (
    Adam,
    LinearFamily,
    MlpBN,
    PolynomialFeedback,
    ZeroFn,
    adam_step,
    load_params,
    save_params,
)
from bsde_ml.gradcheck import central_difference, max_relative_error


def _batch(rng, n=40, dim_x=2):
    return rng.uniform(0, 1, n), rng.normal(size=(n, dim_x))


def test_linear_family_forward():
    np.testing.assert_allclose(LinearFamily("z_well", 2, 1.0)(0.0, np.array([3.0, 4.0])), [[6.0, 8.0]])
    np.testing.assert_allclose(LinearFamily("z_mis", 2, 0.5)(0.0, np.array([1.0, 0.0])), [[2.0, 0.0]])
    np.testing.assert_allclose(LinearFamily("y_well", 2, 2.0)(0.0, np.array([1.0, 2.0])), [[10.0]])
    np.testing.assert_allclose(LinearFamily("y_mis", 2, 1.0)(0.0, np.array([1.0, 2.0])), [[25.0]])


def test_linear_family_ignores_mode():
    fn = LinearFamily("z_mis", 3, 0.7)
    t, x = _batch(np.random.default_rng(0), dim_x=3)
    np.testing.assert_array_equal(fn(t, x, training=True), fn(t, x, training=False))


def test_linear_family_backward_is_basis_contraction():
    rng = np.random.default_rng(1)
    t, x = _batch(rng)
    c = rng.normal(size=x.shape)
    fn = LinearFamily("z_well", 2, 0.3)
    fn.forward(t, x)
    assert fn.backward(c)[0] == pytest.approx(np.sum(2 * x * c))
    fn.forward(t, x)
    assert fn.backward(np.zeros_like(c))[0] == 0.0


def test_zero_mlp_outputs_zero():
    fn = MlpBN(2, 3, seed=0)
    fn.params = np.zeros(fn.n_params)
    t, x = _batch(np.random.default_rng(2))
    np.testing.assert_array_equal(fn(t, x, training=True), 0.0)
    np.testing.assert_array_equal(fn(t, x), 0.0)


def test_zero_policy_constructors():
    t, x = _batch(np.random.default_rng(3))
    np.testing.assert_array_equal(ZeroFn(2, 1)(t, x), 0.0)
    np.testing.assert_array_equal(MlpBN(2, 1, zero_output=True)(t, x), 0.0)
    assert ZeroFn(2, 1).n_params == 0


def test_backward_before_forward():
    for fn in (MlpBN(2, 1), LinearFamily("z_well", 2), ZeroFn(2, 1)):
        with pytest.raises(RuntimeError):
            fn.backward(np.zeros((1, fn.output_dim)))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        MlpBN(2, 1)(np.zeros(3), np.zeros((3, 4)))


def test_mlp_hidden_layer_shape():
    fn = MlpBN(2, 1)
    d = 3
    assert fn.hidden == 16
    assert fn.n_params == 2 * d + d * 16 + 16 + 16 * 1 + 1


@pytest.mark.parametrize("fn_factory", [
    lambda: MlpBN(2, 3, seed=5),
    lambda: LinearFamily("z_mis", 2, 0.4),
    lambda: PolynomialFeedback(2, 2, degree=2, theta=np.random.default_rng(0).normal(size=12)),
])
@pytest.mark.parametrize("training", [True, False])
def test_backward_matches_finite_differences(fn_factory, training):
    rng = np.random.default_rng(4)
    fn = fn_factory()
    if isinstance(fn, MlpBN):
        fn.running_mean = rng.normal(size=3)
        fn.running_var = rng.uniform(0.5, 2.0, 3)
    t, x = _batch(rng)
    c = rng.normal(size=(len(t), fn.output_dim))

    def objective(p):
        clone = fn.copy()
        clone.params = p
        return float(np.sum(clone.forward(t, x, training=training) * c))

    work = fn.copy()
    work.forward(t, x, training=training)
    analytic = work.backward(c)
    numeric = central_difference(objective, fn.params.copy(), h=1e-5)
    assert max_relative_error(analytic, numeric) <= 1e-5


def test_training_mode_updates_running_stats():
    fn = MlpBN(1, 1, momentum=0.1)
    t = np.linspace(0, 1, 11)
    x = np.full((11, 1), 4.0)
    fn.forward(t, x, training=True)
    np.testing.assert_allclose(fn.running_mean, [0.05, 0.4])
    np.testing.assert_allclose(fn.running_var, [0.9 + 0.1 * np.var(t, ddof=1), 0.9])
    before = fn.running_mean.copy()
    fn.forward(t, x, training=False)
    np.testing.assert_array_equal(fn.running_mean, before)


def test_eval_mode_is_pure():
    fn = MlpBN(2, 1, seed=9)
    t, x = _batch(np.random.default_rng(5))
    fn.forward(t, x, training=True)
    a = fn(t, x)
    b = fn(t, x)
    assert a.tobytes() == b.tobytes()
    # eval output of one row does not depend on the rest of the batch
    np.testing.assert_allclose(fn(t[:1], x[:1]), a[:1], rtol=1e-14)


def test_polynomial_feedback_forward():
    fn = PolynomialFeedback(1, 1, degree=2, theta=[1.0, 2.0, 3.0])
    np.testing.assert_allclose(fn(np.array([0.5]), np.array([[2.0]])), [[2.0 * (1 + 1 + 0.75)]])


def test_adam_zero_gradient_keeps_params():
    opt = Adam(lr=0.1)
    p = np.array([1.0, -2.0])
    for _ in range(5):
        p = adam_step(opt, p, np.zeros(2))
    np.testing.assert_array_equal(p, [1.0, -2.0])


@pytest.mark.parametrize("g", [3.0, -0.02])
def test_adam_first_step_bound(g):
    opt = Adam(lr=0.01)
    p1 = opt.step(np.array([0.5]), np.array([g]))[0]
    assert abs(p1 - 0.5) <= 0.01 * (1 + 1e-8)
    assert np.sign(p1 - 0.5) == -np.sign(g)


def test_adam_minimizes_quadratic():
    opt = Adam(lr=0.1)
    theta = np.array([0.0])
    for _ in range(500):
        theta = opt.step(theta, 2 * (theta - 3.0))
    assert abs(theta[0] - 3.0) < 1e-3


def test_adam_weight_decay_is_coupled_l2():
    # with zero loss gradient, decay alone acts as gradient wd * theta
    a, b = Adam(lr=0.01, weight_decay=0.5), Adam(lr=0.01)
    p = np.array([2.0])
    assert a.step(p, np.zeros(1))[0] == b.step(p, 0.5 * p)[0]
    assert a.step_count == 1


def test_param_snapshot_roundtrip(tmp_path):
    fn = MlpBN(2, 1, seed=3)
    fn.forward(*_batch(np.random.default_rng(0)), training=True)
    path = tmp_path / "u.csv"
    save_params(fn, path)
    assert path.read_text().startswith("# arch=mlp-bn version=1")
    other = load_params(MlpBN(2, 1, seed=99), path)
    np.testing.assert_array_equal(other.params, fn.params)
    np.testing.assert_array_equal(other.running_var, fn.running_var)
    with pytest.raises(ValueError):
        load_params(LinearFamily("z_well", 2), path)
