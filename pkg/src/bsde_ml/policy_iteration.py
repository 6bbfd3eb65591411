"""Policy iteration driven by the measurability loss.

Each outer iteration rolls out the current policy, fits ``z`` to
``sigma^T v_x`` on those rollouts, then regresses a new policy onto the
Hamiltonian minimizer ``-R^{-1} Upsilon^T z``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .approximators import Adam, MlpBN, ParamFn, ZeroFn
from .losses import LossReport, cost_to_go, measurability_loss
from .problems import CostSpec, Problem
from .sde import (
    ControlAffineModel,
    NoiseMode,
    NoiseScheme,
    TimeGrid,
    TrajectoryBatch,
    euler_env_from_model,
    grid_from_dt,
    simulate_model_based,
    simulate_model_free,
)

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def hamiltonian(t, x, u, p, model: ControlAffineModel, cost: CostSpec) -> float:
    """``Q + 0.5 u^T R u + <p, F + G u>`` at a single point."""
    x = np.asarray(x, dtype=float)[None, :]
    u = np.asarray(u, dtype=float).reshape(1, -1)
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape[0] != model.dim_x:
        raise ValueError(f"costate dimension {p.shape[0]} != {model.dim_x}")
    tt = np.array([float(t)])
    return float(cost.running(tt, x, u)[0] + p @ model.velocity(tt, x, u)[0])


def hamiltonian_argmin(t, x, p, model: ControlAffineModel, cost: CostSpec) -> np.ndarray:
    """``-R^{-1} G(t, x)^T p``."""
    x = np.asarray(x, dtype=float)[None, :]
    G = model.gain(np.array([float(t)]), x)[0]
    return -np.linalg.solve(cost.R, G.T @ np.asarray(p, dtype=float))


def improvement_target(t, x, z: ParamFn, scheme: NoiseScheme, R,
                       model: ControlAffineModel | None = None) -> np.ndarray:
    """Batched ``-R^{-1} Upsilon(t, x)^T z(t, x)``, shape ``(N, dim_u)``.

    Model-based operation needs ``model`` for ``Upsilon = G / sigma0``; the
    model-free factor ``I / sigma0`` needs nothing but ``R``.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if scheme.mode is NoiseMode.MODEL_BASED and model is None:
        raise ValueError("model-based policy improvement requires the model")
    zs = z.forward(t, x, training=False)
    ups = scheme.upsilon(t, x, model=model, dim_u=R.shape[0])
    if zs.shape[1] != ups.shape[1]:
        raise ValueError(f"z output dimension {zs.shape[1]} != noise dimension {ups.shape[1]}")
    return -np.linalg.solve(R, np.einsum("nwu,nw->nu", ups, zs).T).T


class Buffer:
    """On-policy trajectory store, refilled every outer iteration."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.batch: TrajectoryBatch | None = None

    def __len__(self) -> int:
        return 0 if self.batch is None else len(self.batch)

    @property
    def generation(self) -> int | None:
        return None if self.batch is None else self.batch.generation

    def fill(self, batch: TrajectoryBatch) -> None:
        if len(batch) > self.capacity:
            raise ValueError(f"{len(batch)} trajectories exceed buffer capacity {self.capacity}")
        self.batch = batch

    def minibatch_indices(self, batch_size: int, rng: np.random.Generator):
        """Endless stream of index arrays, without replacement within each epoch."""
        if self.batch is None or len(self.batch) == 0:
            raise ValueError("buffer is empty")
        n = len(self.batch)
        size = min(batch_size, n)
        while True:
            perm = rng.permutation(n)
            for lo in range(0, n - size + 1, size):
                yield perm[lo:lo + size]

    def minibatches(self, batch_size: int, rng: np.random.Generator):
        for idx in self.minibatch_indices(batch_size, rng):
            yield self.batch.select(idx)


@dataclass
class PIConfig:
    iterations: int = 4
    rollouts: int = 128
    buffer: int = 128
    batch: int = 128
    mode: str = "model-based"
    sigma0: float = 1.414
    horizon: float = 1.0
    dt: float = 0.01
    eval_max_steps: int = 2000
    eval_min_steps: int = 100
    eval_tol: float = 1e-4
    improve_max_steps: int = 2000
    improve_min_steps: int = 100
    improve_tol: float = 1e-4
    window: int = 50
    lr_z: float = 1e-4
    lr_u: float = 1e-4
    weight_decay: float = 1e-8
    hidden: int = 16
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        for name in ("rollouts", "buffer", "batch", "eval_max_steps", "improve_max_steps", "window", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        for name in ("eval_tol", "improve_tol", "horizon", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.rollouts > self.buffer:
            raise ValueError(f"rollouts ({self.rollouts}) exceed buffer capacity ({self.buffer})")
        NoiseMode(self.mode)

    @property
    def scheme(self) -> NoiseScheme:
        return NoiseScheme(NoiseMode(self.mode), self.sigma0)


@dataclass
class DeterministicRollout:
    states: np.ndarray        # (H + 1, dim_x)
    controls: np.ndarray      # (H, dim_u)
    running_costs: np.ndarray
    cost_to_go: np.ndarray    # (H + 1,)
    times: np.ndarray

    @property
    def cost(self) -> float:
        return float(self.cost_to_go[0])


@dataclass
class IterationReport:
    iteration: int
    eval_loss: float
    improve_loss: float
    eval_steps: int
    improve_steps: int
    rollout: DeterministicRollout
    policy: ParamFn = field(repr=False, default=None)

    @property
    def cost(self) -> float:
        return self.rollout.cost

    @property
    def terminal_state(self) -> np.ndarray:
        return self.rollout.states[-1]


def _converged(losses, window: int, tol: float, min_steps: int) -> bool:
    if len(losses) < max(min_steps, 2 * window):
        return False
    prev = np.mean(losses[-2 * window:-window])
    cur = np.mean(losses[-window:])
    return (prev - cur) / max(abs(prev), 1e-300) < tol


def _check_finite(rep: LossReport, what: str, step: int) -> None:
    if not (np.isfinite(rep.loss) and np.all(np.isfinite(rep.grad))):
        raise TrainingDiverged(f"{what} loss became non-finite at step {step}")


def evaluate_policy(buffer: Buffer, z: ParamFn, opt: Adam, cfg: PIConfig,
                    rng: np.random.Generator) -> list[LossReport]:
    """Fit ``z`` to the buffer's generation by minimizing the measurability loss."""
    history: list[LossReport] = []
    losses: list[float] = []
    batches = buffer.minibatches(cfg.batch, rng)
    for step in range(cfg.eval_max_steps):
        batch = next(batches)
        if batch.generation != buffer.generation:
            raise RuntimeError("stale trajectories in buffer")
        rep = measurability_loss(batch, z, training=True)
        _check_finite(rep, "measurability", step)
        z.params = opt.step(z.params, rep.grad)
        history.append(rep)
        losses.append(rep.loss)
        if _converged(losses, cfg.window, cfg.eval_tol, cfg.eval_min_steps):
            break
    return history


def improvement_loss(batch: TrajectoryBatch, z: ParamFn, u: ParamFn, scheme: NoiseScheme, R,
                     model: ControlAffineModel | None = None, training: bool = True,
                     target: np.ndarray | None = None) -> LossReport:
    """``mean_{b,k} |u(t_k, X_k) - target(t_k, X_k)|^2`` and its gradient in ``u``.

    ``target`` may hold precomputed Hamiltonian minimizers for the batch's time points.
    """
    t, x = batch.time_points()
    if target is None:
        target = improvement_target(t, x, z, scheme, R, model)
    pred = u.forward(t, x, training=training)
    resid = pred - target
    n = len(t)
    loss = float(np.sum(resid**2) / n)
    return LossReport(loss, u.backward(2.0 * resid / n), len(batch))


def improve_policy(buffer: Buffer, z: ParamFn, u: ParamFn, opt: Adam, scheme: NoiseScheme,
                   cfg: PIConfig, rng: np.random.Generator, R,
                   model: ControlAffineModel | None = None) -> list[LossReport]:
    """Regress ``u`` onto the Hamiltonian minimizer built from ``z``."""
    stored = buffer.batch
    t, x = stored.time_points()
    # z is frozen here, so the targets are computed once per buffer
    targets = improvement_target(t, x, z, scheme, R, model).reshape(len(stored), stored.grid.steps, -1)
    history: list[LossReport] = []
    losses: list[float] = []
    indices = buffer.minibatch_indices(cfg.batch, rng)
    for step in range(cfg.improve_max_steps):
        idx = next(indices)
        rep = improvement_loss(stored.select(idx), z, u, scheme, R, model,
                               target=targets[idx].reshape(-1, targets.shape[2]))
        _check_finite(rep, "improvement", step)
        u.params = opt.step(u.params, rep.grad)
        history.append(rep)
        losses.append(rep.loss)
        if _converged(losses, cfg.window, cfg.improve_tol, cfg.improve_min_steps):
            break
    return history


def evaluate_deterministic(u: ParamFn, model: ControlAffineModel, cost: CostSpec,
                           grid: TimeGrid | None, x0) -> DeterministicRollout:
    """Noise-free Euler rollout of ``u`` in evaluation mode.

    ``grid=None`` stands for an empty horizon: the cost-to-go is ``phi(x0)``.
    """
    x0 = np.asarray(x0, dtype=float)
    if grid is None:
        phi = cost.terminal(x0[None, :])
        return DeterministicRollout(x0[None, :], np.zeros((0, model.dim_u)), np.zeros(0),
                                    phi.astype(float), np.zeros(1))
    scheme = NoiseScheme(NoiseMode.MODEL_BASED, 0.0)
    dw = np.zeros((1, grid.steps, model.dim_x))
    batch = simulate_model_based(model, scheme, u, cost, grid, x0, dw=dw)
    return DeterministicRollout(batch.states[0], batch.controls[0], batch.running_costs[0],
                                cost_to_go(batch)[0], grid.nodes)


def rollout_batch(problem: Problem, cfg: PIConfig, policy: ParamFn, grid: TimeGrid,
                  generation: int, env=None) -> TrajectoryBatch:
    common = dict(n_paths=cfg.rollouts, seed=cfg.seed, start=generation * cfg.rollouts,
                  stream=1, generation=generation)
    scheme = cfg.scheme
    if scheme.mode is NoiseMode.MODEL_BASED:
        return simulate_model_based(problem.model, scheme, policy, problem.cost, grid,
                                    problem.x0, **common)
    if env is None:
        env = euler_env_from_model(problem.model, problem.x0)
    return simulate_model_free(env, scheme.sigma0, policy, problem.cost, grid, **common)


def make_networks(problem: Problem, cfg: PIConfig) -> tuple[MlpBN, MlpBN]:
    dim_x, dim_u = problem.model.dim_x, problem.model.dim_u
    dim_w = cfg.scheme.dim_w(dim_x, dim_u)
    z = MlpBN(dim_x, dim_w, cfg.hidden, cfg.bn_momentum, cfg.bn_eps, seed=[cfg.seed, 101])
    u = MlpBN(dim_x, dim_u, cfg.hidden, cfg.bn_momentum, cfg.bn_eps, seed=[cfg.seed, 202])
    return z, u


def run_policy_iteration(cfg: PIConfig, problem: Problem, env=None,
                         z: ParamFn | None = None, u: ParamFn | None = None) -> list[IterationReport]:
    """Algorithm loop; report 0 is the zero-policy baseline.

    In model-free mode the learner touches only ``env`` (an Euler wrapper of
    the problem's model by default); ``problem.model`` is used only to score
    each policy on the noise-free system.
    """
    grid = grid_from_dt(cfg.horizon, cfg.dt)
    scheme = cfg.scheme
    if z is None or u is None:
        z0, u0 = make_networks(problem, cfg)
        z = z0 if z is None else z
        u = u0 if u is None else u
    model_for_learner = problem.model if scheme.mode is NoiseMode.MODEL_BASED else None
    policy: ParamFn = ZeroFn(problem.model.dim_x, problem.model.dim_u)
    reports = [IterationReport(0, float("nan"), float("nan"), 0, 0,
                               evaluate_deterministic(policy, problem.model, problem.cost, grid, problem.x0),
                               policy)]
    logger.info("iteration 0 (zero policy): cost %.4f", reports[0].cost)
    buffer = Buffer(cfg.buffer)
    for i in range(cfg.iterations):
        buffer.fill(rollout_batch(problem, cfg, policy, grid, generation=i, env=env))
        rng = np.random.default_rng([cfg.seed, 3, i])
        eval_hist = evaluate_policy(buffer, z, Adam(cfg.lr_z, weight_decay=cfg.weight_decay), cfg, rng)
        imp_hist = improve_policy(buffer, z, u, Adam(cfg.lr_u, weight_decay=cfg.weight_decay), scheme,
                                  cfg, rng, problem.cost.R, model_for_learner)
        policy = u.copy()
        rollout = evaluate_deterministic(policy, problem.model, problem.cost, grid, problem.x0)
        reports.append(IterationReport(i + 1, eval_hist[-1].loss, imp_hist[-1].loss,
                                       len(eval_hist), len(imp_hist), rollout, policy))
        logger.info("iteration %d: eval loss %.4g (%d steps), improve loss %.4g (%d steps), cost %.4f",
                    i + 1, eval_hist[-1].loss, len(eval_hist), imp_hist[-1].loss, len(imp_hist),
                    rollout.cost)
    return reports
