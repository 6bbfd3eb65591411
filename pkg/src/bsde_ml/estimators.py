"""Scikit-learn style front ends.

``BSDEEstimator`` fits an approximator of ``Z`` (or ``Y``) from trajectory
data with one of the three BSDE losses. ``PolicyIterationController`` learns
a feedback policy for a control-affine problem. Both expose ``get_params`` /
``set_params`` and predict on arrays whose first column is time.
"""

from __future__ import annotations

import time
from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .approximators import Adam, ParamFn
from .losses import LOSSES, deep_bsde_loss, martingale_loss, measurability_loss
from .policy_iteration import PIConfig, TrainingDiverged, run_policy_iteration
from .problems import Problem
from .sde import TrajectoryBatch


def _split_tx(X, dim_x: int):
    X = check_array(X, ensure_min_samples=1, dtype=np.float64)
    if X.shape[1] != dim_x + 1:
        raise ValueError(f"expected {dim_x + 1} columns (t, x), got {X.shape[1]}")
    return X[:, 0], X[:, 1:]


def _as_sampler(X, batch_size: int, rng: np.random.Generator):
    if callable(X):
        return X
    if not isinstance(X, TrajectoryBatch):
        raise TypeError("X must be a TrajectoryBatch or a callable step -> TrajectoryBatch")
    n = len(X)
    size = min(batch_size, n)
    state = {"perm": rng.permutation(n), "pos": 0}

    def sample(step):
        if state["pos"] + size > n:
            state["perm"], state["pos"] = rng.permutation(n), 0
        idx = state["perm"][state["pos"]:state["pos"] + size]
        state["pos"] += size
        return X.select(idx)

    return sample


class BSDEEstimator(BaseEstimator):
    """Minimize a BSDE loss over the parameters of ``approximator``.

    Parameters
    ----------
    approximator : ParamFn
        Template, copied at ``fit``. Its output must be ``dim_w`` wide for the
        measurability and deep-bsde losses and 1 wide for the martingale loss.
    loss : {"measurability", "deep-bsde", "martingale"}
    lr, weight_decay : Adam settings.
    n_steps : number of gradient steps.
    batch_size : trajectories per step when ``X`` is a stored batch.
    y0_db_init : starting value of the extra scalar of the deep-bsde loss.
    validation : optional callable ``step -> TrajectoryBatch`` scored (without
        training-mode side effects on linear families) at every step.
    record_time : add a ``wall_time_ms`` column to ``history_``.
    """

    def __init__(self, approximator: ParamFn | None = None, loss: str = "measurability",
                 lr: float = 0.01, weight_decay: float = 0.0, n_steps: int = 2000,
                 batch_size: int = 32, y0_db_init: float = 1.0, validation=None,
                 record_time: bool = False, random_state: int = 0):
        self.approximator = approximator
        self.loss = loss
        self.lr = lr
        self.weight_decay = weight_decay
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.y0_db_init = y0_db_init
        self.validation = validation
        self.record_time = record_time
        self.random_state = random_state

    def _loss(self, batch, fn, y0_db, training=True):
        if self.loss == "measurability":
            return measurability_loss(batch, fn, training)
        if self.loss == "deep-bsde":
            return deep_bsde_loss(batch, fn, y0_db, training)
        if self.loss == "martingale":
            return martingale_loss(batch, fn, training)
        raise ValueError(f"unknown loss {self.loss!r}")

    def fit(self, X, y=None):
        """``X``: a :class:`TrajectoryBatch` or a callable ``step -> TrajectoryBatch``."""
        if self.approximator is None:
            raise ValueError("an approximator template is required")
        if self.n_steps < 0 or self.batch_size < 1:
            raise ValueError("n_steps must be >= 0 and batch_size >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {LOSSES}")
        rng = np.random.default_rng([self.random_state, 5])
        sampler = _as_sampler(X, self.batch_size, rng)
        fn = self.approximator.copy()
        opt = Adam(self.lr, weight_decay=self.weight_decay)
        opt_y0 = Adam(self.lr)
        y0_db = float(self.y0_db_init)
        history = []
        start = time.perf_counter()
        for step in range(self.n_steps):
            rep = self._loss(sampler(step), fn, y0_db, training=True)
            if not np.isfinite(rep.loss):
                raise TrainingDiverged(f"{self.loss} loss became non-finite at step {step}")
            row = {"step": step, "train_loss": rep.loss}
            if self.validation is not None:
                row["val_loss"] = self._loss(self.validation(step), fn, y0_db, training=False).loss
            fn.params = opt.step(fn.params, rep.grad)
            if self.loss == "deep-bsde":
                y0_db = float(opt_y0.step(np.array([y0_db]), np.array([rep.grad_y0]))[0])
                row["y0_db"] = y0_db
            row["param_norm"] = float(np.linalg.norm(fn.params))
            if fn.n_params == 1:
                row["theta"] = float(fn.params[0])
            if self.record_time:
                row["wall_time_ms"] = (time.perf_counter() - start) * 1e3
            history.append(row)
        self.approximator_ = fn
        self.y0_db_ = y0_db if self.loss == "deep-bsde" else None
        self.history_ = history
        self.n_features_in_ = fn.dim_x + 1
        return self

    def predict(self, X):
        """``X`` of shape ``(N, 1 + dim_x)`` with time in column 0."""
        check_is_fitted(self, "approximator_")
        t, x = _split_tx(X, self.approximator_.dim_x)
        return self.approximator_.forward(t, x, training=False)

    def score(self, X, y=None) -> float:
        """Negative loss on a trajectory batch."""
        check_is_fitted(self, "approximator_")
        return -self._loss(X, self.approximator_, self.y0_db_ or 0.0, training=False).loss


_PI_FIELDS = [f.name for f in fields(PIConfig)]


class PolicyIterationController(BaseEstimator):
    """Learn a feedback controller ``u(t, x)``; see :class:`PIConfig` for parameters."""

    def __init__(self, iterations=4, rollouts=128, buffer=128, batch=128, mode="model-based",
                 sigma0=1.414, horizon=1.0, dt=0.01, eval_max_steps=2000, eval_min_steps=100,
                 eval_tol=1e-4, improve_max_steps=2000, improve_min_steps=100, improve_tol=1e-4,
                 window=50, lr_z=1e-4, lr_u=1e-4, weight_decay=1e-8, hidden=16, bn_momentum=0.1,
                 bn_eps=1e-5, seed=0):
        self.iterations = iterations
        self.rollouts = rollouts
        self.buffer = buffer
        self.batch = batch
        self.mode = mode
        self.sigma0 = sigma0
        self.horizon = horizon
        self.dt = dt
        self.eval_max_steps = eval_max_steps
        self.eval_min_steps = eval_min_steps
        self.eval_tol = eval_tol
        self.improve_max_steps = improve_max_steps
        self.improve_min_steps = improve_min_steps
        self.improve_tol = improve_tol
        self.window = window
        self.lr_z = lr_z
        self.lr_u = lr_u
        self.weight_decay = weight_decay
        self.hidden = hidden
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        self.seed = seed

    def config(self) -> PIConfig:
        return PIConfig(**{name: getattr(self, name) for name in _PI_FIELDS})

    def fit(self, problem: Problem, y=None, env=None, z=None, u=None):
        self.reports_ = run_policy_iteration(self.config(), problem, env=env, z=z, u=u)
        self.policy_ = self.reports_[-1].policy
        self.costs_ = [r.cost for r in self.reports_]
        self.n_features_in_ = problem.model.dim_x + 1
        return self

    def predict(self, X):
        check_is_fitted(self, "policy_")
        t, x = _split_tx(X, self.policy_.dim_x)
        return self.policy_.forward(t, x, training=False)
