"""BSDE losses on trajectory batches and Monte-Carlo error criteria.

The backward-integrated start value of a path is

    y0 = phi(X_H) + sum_j g_j dt - sum_j <z(t_j, X_j), dW_j>

and the measurability loss is its (population) variance over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sde import TrajectoryBatch


@dataclass
class Y0Sample:
    y0: np.ndarray
    terminal: np.ndarray
    cost_sum: np.ndarray
    stoch_sum: np.ndarray


@dataclass
class LossReport:
    loss: float
    grad: np.ndarray
    batch_size: int
    grad_y0: float | None = None


def _check_dims(fn, dim, what):
    if fn.output_dim != dim:
        raise ValueError(f"{what} output dimension {fn.output_dim} != {dim}")


def _z_path(batch: TrajectoryBatch, z, training: bool) -> np.ndarray:
    """``z(t_k, X_k)`` for ``k < H``, shape ``(B, H, dim_w)``."""
    _check_dims(z, batch.dim_w, "z")
    t, x = batch.time_points()
    return z.forward(t, x, training=training).reshape(len(batch), batch.grid.steps, batch.dim_w)


def y0_estimate(batch: TrajectoryBatch, z, training: bool = False) -> Y0Sample:
    zs = _z_path(batch, z, training)
    terminal = batch.terminal_costs
    cost_sum = batch.running_costs.sum(axis=1) * batch.grid.dt
    stoch_sum = np.einsum("bkw,bkw->b", zs, batch.dw)
    return Y0Sample(terminal - stoch_sum + cost_sum, terminal, cost_sum, stoch_sum)


def measurability_loss(batch: TrajectoryBatch, z, training: bool = True) -> LossReport:
    B = len(batch)
    if B < 2:
        raise ValueError(f"measurability loss needs at least 2 trajectories, got {B}")
    y0 = y0_estimate(batch, z, training).y0
    centred = y0 - y0.mean()
    loss = float(np.mean(centred**2))
    # d loss / d y0_i = 2 (y0_i - mean) / B ; d y0_i / d z_ik = -dW_ik
    upstream = -(2.0 * centred / B)[:, None, None] * batch.dw
    return LossReport(loss, z.backward(upstream.reshape(-1, batch.dim_w)), B)


def deep_bsde_loss(batch: TrajectoryBatch, z, y0_db: float, training: bool = True) -> LossReport:
    """Mean squared terminal mismatch of the forward-integrated trial process."""
    B = len(batch)
    if B < 1:
        raise ValueError("deep BSDE loss needs a non-empty batch")
    zs = _z_path(batch, z, training)
    dt = batch.grid.dt
    y_T = (y0_db - batch.running_costs.sum(axis=1) * dt
           + np.einsum("bkw,bkw->b", zs, batch.dw))
    resid = y_T - batch.terminal_costs
    loss = float(np.mean(resid**2))
    coef = 2.0 * resid / B
    grad = z.backward((coef[:, None, None] * batch.dw).reshape(-1, batch.dim_w))
    return LossReport(loss, grad, B, grad_y0=float(coef.sum()))


def cost_to_go(batch: TrajectoryBatch) -> np.ndarray:
    """Realized ``phi(X_H) + sum_{j >= k} g_j dt`` for ``k = 0..H``, shape ``(B, H + 1)``."""
    dt = batch.grid.dt
    tail = np.cumsum(batch.running_costs[:, ::-1], axis=1)[:, ::-1] * dt
    return batch.terminal_costs[:, None] + np.concatenate([tail, np.zeros((len(batch), 1))], axis=1)


def martingale_loss(batch: TrajectoryBatch, y, training: bool = True) -> LossReport:
    """Monte-Carlo regression of ``y(t_k, X_k)`` onto the realized cost-to-go."""
    _check_dims(y, 1, "y")
    B, H = len(batch), batch.grid.steps
    t, x = batch.time_points()
    pred = y.forward(t, x, training=training).reshape(B, H)
    resid = pred - cost_to_go(batch)[:, :H]
    dt = batch.grid.dt
    loss = float(np.sum(resid**2) * dt / B)
    grad = y.backward((2.0 * resid * dt / B).reshape(-1, 1))
    return LossReport(loss, grad, B)


def _path_error(batch, fn, truth):
    B, H = len(batch), batch.grid.steps
    t, x = batch.time_points()
    diff = fn.forward(t, x, training=False) - truth(t, x)
    return np.sum(diff.reshape(B, H, -1) ** 2, axis=(1, 2)) * batch.grid.dt


def zerr_samples(batch: TrajectoryBatch, z, true_z) -> np.ndarray:
    """Per-path ``sum_k |z - Z|^2 dt``."""
    return _path_error(batch, z, true_z)


def yerr_samples(batch: TrajectoryBatch, y, true_y) -> np.ndarray:
    return _path_error(batch, y, true_y)


def zerr_mc(batch: TrajectoryBatch, z, true_z) -> float:
    return float(np.mean(zerr_samples(batch, z, true_z)))


def yerr_mc(batch: TrajectoryBatch, y, true_y) -> float:
    return float(np.mean(yerr_samples(batch, y, true_y)))


LOSSES = ("measurability", "deep-bsde", "martingale")
