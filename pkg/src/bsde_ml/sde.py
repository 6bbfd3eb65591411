"""Time grids, Brownian sampling and Euler-Maruyama rollouts.

All rollouts are vectorized over a batch of paths. Every path owns its own
random stream, derived from ``(seed, stream, path_index)``, so a path is
reproducible regardless of how many siblings were simulated with it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol

import numpy as np

DIVERGENCE_BOUND = 1e6


class SimulationDiverged(RuntimeError):
    """Raised when a rollout leaves the finite, bounded region."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"simulation diverged at step {step}")


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        """The ``steps + 1`` grid points ``k * dt``."""
        return np.arange(self.steps + 1) * self.dt

    def node(self, k: int) -> float:
        return k * self.dt


def make_grid(T: float, H: int) -> TimeGrid:
    return TimeGrid(float(T), int(H))


def grid_from_dt(T: float, dt: float) -> TimeGrid:
    """Grid with the step count closest to ``T / dt``."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return make_grid(T, max(1, int(round(T / dt))))


def path_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(index)])


def sample_brownian(grid: TimeGrid, dim_w: int, rng: np.random.Generator) -> np.ndarray:
    """Increments ``W(t_{k+1}) - W(t_k)`` for one path, shape ``(H, dim_w)``."""
    if dim_w < 0:
        raise ValueError(f"dim_w must be non-negative, got {dim_w}")
    return rng.standard_normal((grid.steps, dim_w)) * math.sqrt(grid.dt)


def brownian_batch(grid: TimeGrid, dim_w: int, n_paths: int, seed: int,
                   start: int = 0, stream: int = 0) -> np.ndarray:
    """Increments for paths ``start .. start + n_paths - 1``, shape ``(B, H, dim_w)``."""
    out = np.empty((n_paths, grid.steps, dim_w))
    for i in range(n_paths):
        out[i] = sample_brownian(grid, dim_w, path_rng(seed, start + i, stream))
    return out


@dataclass
class ControlAffineModel:
    """Deterministic dynamics ``dx/dt = F(t, x) + G(t, x) u``.

    ``drift(t, x)`` maps ``(N,), (N, dim_x)`` to ``(N, dim_x)`` and
    ``gain(t, x)`` maps them to ``(N, dim_x, dim_u)``.
    """

    dim_x: int
    dim_u: int
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gain: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def velocity(self, t, x, u) -> np.ndarray:
        return self.drift(t, x) + np.einsum("nij,nj->ni", self.gain(t, x), u)


class NoiseMode(str, Enum):
    MODEL_BASED = "model-based"
    MODEL_FREE = "model-free"


@dataclass(frozen=True)
class NoiseScheme:
    """Choice of diffusion ``sigma`` and factor ``upsilon`` with ``sigma @ upsilon == G``.

    Model-based injects ``sigma0 * dW`` into every state coordinate; model-free
    perturbs the control, which amounts to ``sigma = sigma0 * G``.
    """

    mode: NoiseMode
    sigma0: float

    def __post_init__(self):
        object.__setattr__(self, "mode", NoiseMode(self.mode))
        if not self.sigma0 >= 0:
            raise ValueError(f"sigma0 must be non-negative, got {self.sigma0}")

    def dim_w(self, dim_x: int, dim_u: int) -> int:
        return dim_x if self.mode is NoiseMode.MODEL_BASED else dim_u

    def sigma(self, model: ControlAffineModel, t, x) -> np.ndarray:
        n = len(x)
        if self.mode is NoiseMode.MODEL_BASED:
            return np.broadcast_to(self.sigma0 * np.eye(model.dim_x), (n, model.dim_x, model.dim_x))
        return self.sigma0 * model.gain(t, x)

    def diffuse(self, model: ControlAffineModel, t, x, dw) -> np.ndarray:
        """``sigma(t, x) @ dw`` for a batch."""
        if self.mode is NoiseMode.MODEL_BASED:
            return self.sigma0 * dw
        return self.sigma0 * np.einsum("nij,nj->ni", model.gain(t, x), dw)

    def upsilon(self, t, x, model: ControlAffineModel | None = None, dim_u: int | None = None) -> np.ndarray:
        n = len(x)
        if self.mode is NoiseMode.MODEL_BASED:
            if model is None:
                raise ValueError("model-based upsilon needs the gain G of a model")
            return model.gain(t, x) / self.sigma0
        if dim_u is None:
            if model is None:
                raise ValueError("model-free upsilon needs dim_u")
            dim_u = model.dim_u
        return np.broadcast_to(np.eye(dim_u) / self.sigma0, (n, dim_u, dim_u))


class BlackBoxEnv(Protocol):
    """Opaque stepper. States and controls may carry a leading batch axis."""

    dim_x: int
    dim_u: int

    def reset(self) -> np.ndarray: ...

    def step(self, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray: ...


class EulerEnv:
    """Hides a :class:`ControlAffineModel` behind the black-box interface."""

    def __init__(self, model: ControlAffineModel, x0):
        self._model = model
        self._x0 = np.asarray(x0, dtype=float)
        self.dim_x = model.dim_x
        self.dim_u = model.dim_u
        self._t = 0.0

    def reset(self) -> np.ndarray:
        self._t = 0.0
        return self._x0.copy()

    def step(self, x, u, dt):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        single = x.ndim == 1
        x2, u2 = np.atleast_2d(x), u.reshape(len(np.atleast_2d(x)), -1)
        t = np.full(len(x2), self._t)
        nxt = x2 + self._model.velocity(t, x2, u2) * dt
        self._t += dt
        return nxt[0] if single else nxt


def euler_env_from_model(model: ControlAffineModel, x0) -> EulerEnv:
    return EulerEnv(model, x0)


@dataclass
class Trajectory:
    grid: TimeGrid
    states: np.ndarray          # (H + 1, dim_x)
    dw: np.ndarray              # (H, dim_w)
    controls: np.ndarray        # (H, dim_u)
    running_costs: np.ndarray   # (H,)
    terminal_cost: float


@dataclass
class TrajectoryBatch:
    """A stack of trajectories on one grid, generated by one policy."""

    grid: TimeGrid
    states: np.ndarray          # (B, H + 1, dim_x)
    dw: np.ndarray              # (B, H, dim_w)
    controls: np.ndarray        # (B, H, dim_u)
    running_costs: np.ndarray   # (B, H)
    terminal_costs: np.ndarray  # (B,)
    generation: int = 0
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.states))
        B, H = len(self.states), self.grid.steps
        if self.states.shape[:2] != (B, H + 1):
            raise ValueError(f"states shape {self.states.shape} does not match grid with {H} steps")
        for name in ("dw", "controls"):
            if getattr(self, name).shape[:2] != (B, H):
                raise ValueError(f"{name} shape {getattr(self, name).shape} inconsistent with grid")
        if self.running_costs.shape != (B, H) or self.terminal_costs.shape != (B,):
            raise ValueError("cost arrays inconsistent with batch")

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(self.grid, self.states[i], self.dw[i], self.controls[i],
                          self.running_costs[i], float(self.terminal_costs[i]))

    @property
    def dim_x(self) -> int:
        return self.states.shape[2]

    @property
    def dim_w(self) -> int:
        return self.dw.shape[2]

    def select(self, idx) -> "TrajectoryBatch":
        idx = np.asarray(idx)
        return TrajectoryBatch(self.grid, self.states[idx], self.dw[idx], self.controls[idx],
                               self.running_costs[idx], self.terminal_costs[idx],
                               self.generation, self.ids[idx])

    @classmethod
    def concatenate(cls, batches) -> "TrajectoryBatch":
        batches = list(batches)
        first = batches[0]
        if any(b.grid != first.grid or b.generation != first.generation for b in batches):
            raise ValueError("batches must share grid and policy generation")
        return cls(first.grid,
                   *(np.concatenate([getattr(b, f) for b in batches])
                     for f in ("states", "dw", "controls", "running_costs", "terminal_costs")),
                   generation=first.generation,
                   ids=np.concatenate([b.ids for b in batches]))

    def time_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(t_k, X_k)`` for ``k < H`` over the batch: ``(B*H,)``, ``(B*H, dim_x)``."""
        B, H = len(self), self.grid.steps
        t = np.tile(self.grid.nodes[:-1], B)
        return t, self.states[:, :-1].reshape(B * H, self.dim_x)


def _check_state(x: np.ndarray, k: int) -> None:
    # NaN fails the comparison, so a single reduction covers both cases
    if not np.abs(x).max(initial=0.0) <= DIVERGENCE_BOUND:
        raise SimulationDiverged(k)


def _policy_controls(policy, t: float, x: np.ndarray) -> np.ndarray:
    return policy.forward(np.full(len(x), t), x, training=False)


def simulate_model_based(model: ControlAffineModel, scheme: NoiseScheme, policy, cost, grid: TimeGrid,
                         x0, n_paths: int = 1, seed: int = 0, start: int = 0, stream: int = 0,
                         dw: np.ndarray | None = None, generation: int = 0) -> TrajectoryBatch:
    """Euler-Maruyama rollout ``X+ = X + (F + G u) dt + sigma dW``.

    ``dw`` overrides the sampled increments; it must have shape ``(B, H, dim_w)``.
    """
    dim_w = scheme.dim_w(model.dim_x, model.dim_u)
    if dw is None:
        dw = brownian_batch(grid, dim_w, n_paths, seed, start, stream)
    n_paths = len(dw)
    if dw.shape[1:] != (grid.steps, dim_w):
        raise ValueError(f"dw shape {dw.shape} does not match grid/noise dimension {dim_w}")
    x0 = np.asarray(x0, dtype=float)
    states = np.empty((n_paths, grid.steps + 1, model.dim_x))
    controls = np.empty((n_paths, grid.steps, model.dim_u))
    costs = np.empty((n_paths, grid.steps))
    states[:, 0] = x0
    dt = grid.dt
    for k in range(grid.steps):
        t = grid.node(k)
        x = states[:, k]
        tt = np.full(n_paths, t)
        u = _policy_controls(policy, t, x)
        controls[:, k] = u
        costs[:, k] = cost.running(tt, x, u)
        states[:, k + 1] = x + model.velocity(tt, x, u) * dt + scheme.diffuse(model, tt, x, dw[:, k])
        _check_state(states[:, k + 1], k + 1)
    return TrajectoryBatch(grid, states, dw, controls, costs, cost.terminal(states[:, -1]),
                           generation=generation, ids=start + np.arange(n_paths))


def simulate_model_free(env: BlackBoxEnv, sigma0: float, policy, cost, grid: TimeGrid,
                        n_paths: int = 1, seed: int = 0, start: int = 0, stream: int = 0,
                        dw: np.ndarray | None = None, generation: int = 0) -> TrajectoryBatch:
    """Rollout through an opaque env with exploration noise on the control.

    The env receives ``u + sigma0 * dW / dt``; the batch records the
    unperturbed ``u`` and costs evaluated at it, together with ``dW``.
    """
    if dw is None:
        dw = brownian_batch(grid, env.dim_u, n_paths, seed, start, stream)
    n_paths = len(dw)
    if dw.shape[1:] != (grid.steps, env.dim_u):
        raise ValueError(f"dw shape {dw.shape} does not match env control dimension {env.dim_u}")
    x0 = np.asarray(env.reset(), dtype=float)
    states = np.empty((n_paths, grid.steps + 1, env.dim_x))
    controls = np.empty((n_paths, grid.steps, env.dim_u))
    costs = np.empty((n_paths, grid.steps))
    states[:, 0] = x0
    dt = grid.dt
    for k in range(grid.steps):
        t = grid.node(k)
        x = states[:, k]
        u = _policy_controls(policy, t, x)
        if u.shape[1] != env.dim_u:
            raise ValueError(f"policy output dim {u.shape[1]} != env control dim {env.dim_u}")
        controls[:, k] = u
        costs[:, k] = cost.running(np.full(n_paths, t), x, u)
        states[:, k + 1] = env.step(x, u + sigma0 * dw[:, k] / dt, dt)
        _check_state(states[:, k + 1], k + 1)
    return TrajectoryBatch(grid, states, dw, controls, costs, cost.terminal(states[:, -1]),
                           generation=generation, ids=start + np.arange(n_paths))


def trajectory_csv_header(dim_x: int, dim_u: int, dim_w: int) -> list[str]:
    return (["trajectory_id", "k", "t"] + [f"x{i}" for i in range(dim_x)]
            + [f"u{i}" for i in range(dim_u)] + [f"dw{i}" for i in range(dim_w)] + ["g"])


def write_trajectories_csv(batch: TrajectoryBatch, path) -> None:
    """One row per ``(trajectory, k)`` for ``k = 0..H``.

    Columns: ``trajectory_id, k, t, x0.., u0.., dw0.., g``. On the final row
    ``k = H`` the control and increment cells are empty and ``g`` holds the
    terminal cost.
    """
    dim_u, dim_w = batch.controls.shape[2], batch.dim_w
    nodes = batch.grid.nodes
    H = batch.grid.steps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_csv_header(batch.dim_x, dim_u, dim_w))
        for b in range(len(batch)):
            tid = int(batch.ids[b])
            for k in range(H + 1):
                xs = [repr(float(v)) for v in batch.states[b, k]]
                if k < H:
                    tail = ([repr(float(v)) for v in batch.controls[b, k]]
                            + [repr(float(v)) for v in batch.dw[b, k]]
                            + [repr(float(batch.running_costs[b, k]))])
                else:
                    tail = [""] * (dim_u + dim_w) + [repr(float(batch.terminal_costs[b]))]
                w.writerow([tid, k, repr(float(nodes[k]))] + xs + tail)
