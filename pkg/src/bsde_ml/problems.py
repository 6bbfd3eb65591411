"""Cost functionals and the two benchmark problems.

``example1`` is an uncontrolled n-dimensional Brownian motion with running
cost ``-n`` and terminal cost ``|x|^2``; its value function is ``|x|^2``.
``pendulum`` is the swing-up task from the hanging position ``(pi, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .sde import ControlAffineModel


@dataclass
class CostSpec:
    """``phi(x_T) + int Q(t, x) + 0.5 u^T R u dt``.

    ``terminal`` maps ``(N, dim_x)`` to ``(N,)``; ``state_cost`` maps
    ``(N,), (N, dim_x)`` to ``(N,)``.
    """

    terminal: Callable[[np.ndarray], np.ndarray]
    state_cost: Callable[[np.ndarray, np.ndarray], np.ndarray]
    R: np.ndarray

    def __post_init__(self):
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float)) if np.size(self.R) else np.zeros((0, 0))
        if self.R.shape[0] != self.R.shape[1] or not np.allclose(self.R, self.R.T):
            raise ValueError("R must be a symmetric matrix")
        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc

    @property
    def dim_u(self) -> int:
        return self.R.shape[0]

    def running(self, t, x, u) -> np.ndarray:
        """Batched ``Q(t, x) + 0.5 u^T R u``."""
        u = np.asarray(u, dtype=float).reshape(len(x), -1)
        if u.shape[1] != self.dim_u:
            raise ValueError(f"control dimension {u.shape[1]} != {self.dim_u}")
        return self.state_cost(t, x) + 0.5 * np.einsum("ni,ij,nj->n", u, self.R, u)


def running_cost(cost: CostSpec, t, x, u) -> float:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float).reshape(-1)
    return float(cost.running(np.array([float(t)]), x[None, :], u[None, :])[0])


@dataclass
class Problem:
    name: str
    model: ControlAffineModel
    cost: CostSpec
    x0: np.ndarray
    horizon: float


# ---------------------------------------------------------------- example 1


class Parameterization(str, Enum):
    WELL = "well"
    MIS = "mis"


def example1_model(n: int) -> ControlAffineModel:
    return ControlAffineModel(
        dim_x=n, dim_u=0,
        drift=lambda t, x: np.zeros_like(x),
        gain=lambda t, x: np.zeros((len(x), x.shape[1], 0)),
    )


def example1_cost(n: int) -> CostSpec:
    return CostSpec(
        terminal=lambda x: np.sum(x * x, axis=-1),
        state_cost=lambda t, x: np.full(len(x), -float(n)),
        R=np.zeros((0, 0)),
    )


def example1_problem(n: int = 1, T: float = 0.5) -> Problem:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return Problem("example1", example1_model(n), example1_cost(n), np.zeros(n), T)


def example1_true_solution(t, x):
    """Exact ``(Y, Z) = (|x|^2, 2x)``."""
    x = np.asarray(x, dtype=float)
    return float(x @ x), 2.0 * x


def example1_true_y(t, x):
    return np.sum(x * x, axis=-1, keepdims=True)


def example1_true_z(t, x):
    return 2.0 * x


def example1_yerr(theta, n, T):
    """Closed-form value error of ``theta |x|^4`` against ``|x|^2``."""
    return n * (n + 2) * T**3 * (1 / 3 + theta**2 * (n + 4) * (n + 6) * T**2 / 5
                                 - 2 * theta * (n + 4) * T / 4)


def example1_zerr(theta, n, T):
    """Closed-form gradient error of ``4 theta x |x|^2`` against ``2x``."""
    return 4 * n * T**2 * (0.5 + theta**2 * (n + 2) * (n + 4) * T**2
                           - 4 / 3 * theta * (n + 2) * T)


def theta_star_y(n, T):
    return 5 / (4 * (n + 6) * T)


def theta_star_z(n, T):
    return 2 / (3 * (n + 4) * T)


# ----------------------------------------------------------------- pendulum


def pendulum_model(a: float = 9.8, b: float = 0.1, inertia: float = 1.0) -> ControlAffineModel:
    def drift(t, x):
        th, om = x[:, 0], x[:, 1]
        return np.stack([om, (a * np.sin(th) - b * om) / inertia], axis=1)

    def gain(t, x):
        g = np.zeros((len(x), 2, 1))
        g[:, 1, 0] = np.cos(x[:, 0]) / inertia
        return g

    return ControlAffineModel(dim_x=2, dim_u=1, drift=drift, gain=gain)


def pendulum_cost(weights=(1.01, 0.01), target=(0.0, 0.0), r: float = 0.005) -> CostSpec:
    lam = np.asarray(weights, dtype=float)
    xstar = np.asarray(target, dtype=float)

    def state_cost(t, x):
        d = x - xstar
        return np.sum(lam * d * d, axis=-1)

    return CostSpec(terminal=lambda x: np.zeros(len(x)), state_cost=state_cost,
                    R=np.array([[r]]))


def pendulum_problem(T: float = 1.0, a: float = 9.8, b: float = 0.1, inertia: float = 1.0,
                     weights=(1.01, 0.01), target=(0.0, 0.0), r: float = 0.005,
                     x0=(np.pi, 0.0)) -> Problem:
    return Problem("pendulum", pendulum_model(a, b, inertia), pendulum_cost(weights, target, r),
                   np.asarray(x0, dtype=float), T)


# ------------------------------------------------------------ scalar LQ


def lq_problem(a: float = -0.5, b: float = 1.0, q: float = 1.0, r: float = 1.0,
               terminal_weight: float = 0.0, x0: float = 1.0, T: float = 1.0) -> Problem:
    """``dx = (a x + b u) dt``, cost ``p_T x_T^2 + int q x^2 + 0.5 r u^2 dt``."""
    model = ControlAffineModel(
        dim_x=1, dim_u=1,
        drift=lambda t, x: a * x,
        gain=lambda t, x: np.full((len(x), 1, 1), b),
    )
    cost = CostSpec(terminal=lambda x: terminal_weight * x[:, 0] ** 2,
                    state_cost=lambda t, x: q * x[:, 0] ** 2, R=np.array([[r]]))
    return Problem("lq", model, cost, np.array([float(x0)]), T)


PROBLEMS = {"example1": example1_problem, "pendulum": pendulum_problem, "lq": lq_problem}


def make_problem(name: str, **kwargs) -> Problem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**kwargs)
