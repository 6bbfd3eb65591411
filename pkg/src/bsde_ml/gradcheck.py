"""Finite-difference verification of the analytic loss gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .approximators import LinearFamily, MlpBN, ParamFn, PolynomialFeedback, ZeroFn
from .losses import LOSSES, deep_bsde_loss, martingale_loss, measurability_loss
from .problems import example1_problem
from .sde import NoiseScheme, make_grid, simulate_model_based

TOLERANCE = 1e-5


def central_difference(f: Callable[[np.ndarray], float], p: np.ndarray, h: float = 1e-5) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    out = np.empty_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = h
        out[i] = (f(p + e) - f(p - e)) / (2 * h)
    return out


def max_relative_error(analytic, numeric) -> float:
    """Max-norm error relative to the larger gradient's max norm; 0 for empty vectors."""
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max(), np.finfo(float).tiny)
    return float(np.abs(a - n).max() / scale)


@dataclass
class CheckResult:
    arch: str
    loss: str
    n_params: int
    error: float

    @property
    def passed(self) -> bool:
        return self.error <= TOLERANCE


def _loss_value(loss: str, batch, fn: ParamFn, y0_db: float):
    if loss == "measurability":
        return measurability_loss(batch, fn)
    if loss == "deep-bsde":
        return deep_bsde_loss(batch, fn, y0_db)
    if loss == "martingale":
        return martingale_loss(batch, fn)
    raise ValueError(f"unknown loss {loss!r}")


def architectures(dim_x: int, output_dim: int, seed: int) -> dict[str, ParamFn]:
    rng = np.random.default_rng([seed, 1])
    family = ("z_mis" if output_dim == dim_x else "y_mis")
    return {
        "empty": ZeroFn(dim_x, output_dim),
        "linear-family": LinearFamily(family, dim_x, 0.4),
        "polynomial": PolynomialFeedback(dim_x, output_dim, degree=2,
                                         theta=rng.normal(size=3 * dim_x * output_dim)),
        "mlp-bn": MlpBN(dim_x, output_dim, seed=seed),
    }


def check_pair(fn: ParamFn, loss: str, batch, y0_db: float = 0.3, h: float = 1e-5) -> float:
    """Max relative error of the loss gradient (including the y0_db slot for deep-bsde)."""
    work = fn.copy()
    rep = _loss_value(loss, batch, work, y0_db)
    analytic = rep.grad
    if loss == "deep-bsde":
        analytic = np.append(analytic, rep.grad_y0)

    def objective(v):
        clone = fn.copy()
        clone.params = v[: fn.n_params]
        y0 = v[fn.n_params] if loss == "deep-bsde" else y0_db
        return _loss_value(loss, batch, clone, y0).loss

    p = fn.params.copy()
    if loss == "deep-bsde":
        p = np.append(p, y0_db)
    if loss != "deep-bsde" and fn.n_params == 0:
        return 0.0
    return max_relative_error(analytic, central_difference(objective, p, h))


def run_gradcheck(seed: int = 0, n: int = 2, paths: int = 8, steps: int = 10) -> list[CheckResult]:
    prob = example1_problem(n=n, T=0.5)
    grid = make_grid(0.5, steps)
    batch = simulate_model_based(prob.model, NoiseScheme("model-based", 1.0), ZeroFn(n, 0), prob.cost,
                                 grid, prob.x0, n_paths=paths, seed=seed)
    results = []
    for loss in LOSSES:
        out_dim = 1 if loss == "martingale" else n
        for name, fn in architectures(n, out_dim, seed).items():
            results.append(CheckResult(name, loss, fn.n_params, check_pair(fn, loss, batch)))
    return results
