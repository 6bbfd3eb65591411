import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bsde_ml.approximators import LinearFamily, ZeroFn
from bsde_ml.estimators import BSDEEstimator, PolicyIterationController
from bsde_ml.problems import example1_problem, pendulum_problem
from bsde_ml.sde import NoiseScheme, make_grid, simulate_model_based


def _batch(n=1, paths=256, seed=0):
    prob = example1_problem(n)
    return simulate_model_based(prob.model, NoiseScheme("model-based", 1.0), ZeroFn(n, 0), prob.cost,
                                make_grid(0.5, 50), prob.x0, n_paths=paths, seed=seed)


def test_get_params_and_clone():
    est = BSDEEstimator(LinearFamily("z_well", 1, 0.5), loss="deep-bsde", lr=0.02)
    params = est.get_params()
    assert params["loss"] == "deep-bsde" and params["lr"] == 0.02
    other = clone(est)
    assert other.get_params()["lr"] == 0.02 and other is not est
    est.set_params(n_steps=10)
    assert est.n_steps == 10
    ctrl = PolicyIterationController(mode="model-free", iterations=2)
    assert ctrl.config().mode == "model-free" and clone(ctrl).iterations == 2


def test_fit_predict_on_stored_batch():
    est = BSDEEstimator(LinearFamily("z_well", 1, 0.5), n_steps=800, random_state=1).fit(_batch())
    assert est.approximator_.theta == pytest.approx(1.0, abs=0.05)
    assert est.approximator.theta == 0.5
    X = np.array([[0.1, 2.0], [0.2, -1.0]])
    np.testing.assert_allclose(est.predict(X), 2 * est.approximator_.theta * X[:, 1:])
    assert est.score(_batch(seed=9)) <= 0
    assert len(est.history_) == 800 and "wall_time_ms" not in est.history_[0]


def test_deep_bsde_tracks_offset():
    est = BSDEEstimator(LinearFamily("z_well", 1, 0.5), loss="deep-bsde", n_steps=1500).fit(_batch())
    assert abs(est.y0_db_) < 0.1
    assert "y0_db" in est.history_[-1]


def test_predict_validation():
    est = BSDEEstimator(LinearFamily("z_well", 1, 0.5))
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((1, 2)))
    est.set_params(n_steps=1).fit(_batch())
    with pytest.raises(ValueError):
        est.predict(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        est.predict(np.array([[0.0, np.nan]]))


def test_fit_argument_errors():
    with pytest.raises(ValueError):
        BSDEEstimator().fit(_batch())
    with pytest.raises(ValueError):
        BSDEEstimator(LinearFamily("z_well", 1), loss="l1").fit(_batch())
    with pytest.raises(TypeError):
        BSDEEstimator(LinearFamily("z_well", 1)).fit(np.zeros((4, 2)))


def test_record_time_column():
    est = BSDEEstimator(LinearFamily("z_well", 1), n_steps=3, record_time=True).fit(_batch(paths=8))
    assert all("wall_time_ms" in row for row in est.history_)


def test_controller_baseline():
    ctrl = PolicyIterationController(iterations=0).fit(pendulum_problem())
    assert ctrl.costs_ == [pytest.approx(9.9683, abs=1e-4)]
    np.testing.assert_array_equal(ctrl.predict(np.array([[0.0, 1.0, 2.0]])), 0.0)
