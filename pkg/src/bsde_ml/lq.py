"""Reference solutions for the scalar linear-quadratic problem.

Dynamics ``dx = (a x + b u) dt + s dW`` with cost
``p_T x_T^2 + int q x^2 + 0.5 r u^2 dt``. A feedback ``u = -k(t) x`` has value
``P(t) x^2 + c(t)`` where

    P' = -(q + 0.5 r k^2 + 2 (a - b k) P),   P(T) = p_T
    c' = -s^2 P,                              c(T) = 0

and the optimal feedback solves the Riccati equation
``P' = -(q + 2 a P - 2 b^2 P^2 / r)`` with ``k = 2 b P / r``.
All ODEs are integrated backwards with classical RK4 on a dense grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ScalarLQ:
    a: float = -0.5
    b: float = 1.0
    q: float = 1.0
    r: float = 1.0
    terminal_weight: float = 0.0
    T: float = 1.0
    noise: float = 0.0


def rk4_backward(f: Callable[[float, np.ndarray], np.ndarray], y_T, T: float, n: int = 10_000):
    """Integrate ``y' = f(t, y)`` from ``t = T`` down to 0; returns ``(times, values)`` ascending."""
    h = T / n
    y = np.atleast_1d(np.asarray(y_T, dtype=float))
    ts = np.linspace(0.0, T, n + 1)
    out = np.empty((n + 1,) + y.shape)
    out[n] = y
    for i in range(n, 0, -1):
        t = ts[i]
        k1 = f(t, y)
        k2 = f(t - h / 2, y - h / 2 * k1)
        k3 = f(t - h / 2, y - h / 2 * k2)
        k4 = f(t - h, y - h * k3)
        y = y - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i - 1] = y
    return ts, out


class PiecewiseCurve:
    """Linear interpolation of a dense ODE solution."""

    def __init__(self, ts, values):
        self.ts = np.asarray(ts)
        self.values = np.asarray(values)

    def __call__(self, t):
        return np.interp(t, self.ts, self.values)


def policy_value(lq: ScalarLQ, gain: Callable[[float], float], n: int = 10_000):
    """``(P, c)`` curves of the feedback ``u = -gain(t) x``."""

    def rhs(t, y):
        k = gain(t)
        P = y[0]
        return np.array([-(lq.q + 0.5 * lq.r * k * k + 2 * (lq.a - lq.b * k) * P), -lq.noise**2 * P])

    ts, ys = rk4_backward(rhs, [lq.terminal_weight, 0.0], lq.T, n)
    return PiecewiseCurve(ts, ys[:, 0]), PiecewiseCurve(ts, ys[:, 1])


def riccati(lq: ScalarLQ, n: int = 10_000) -> PiecewiseCurve:
    def rhs(t, y):
        P = y[0]
        return np.array([-(lq.q + 2 * lq.a * P - 2 * lq.b**2 * P * P / lq.r)])

    ts, ys = rk4_backward(rhs, [lq.terminal_weight], lq.T, n)
    return PiecewiseCurve(ts, ys[:, 0])


def optimal_gain(lq: ScalarLQ, n: int = 10_000) -> Callable[[float], float]:
    P = riccati(lq, n)
    return lambda t: 2 * lq.b * P(t) / lq.r


def improved_gain(lq: ScalarLQ, gain: Callable[[float], float], n: int = 10_000) -> Callable[[float], float]:
    """Hamiltonian minimizer ``-r^{-1} b v_x`` for the value of ``u = -gain x``."""
    P, _ = policy_value(lq, gain, n)
    return lambda t: 2 * lq.b * P(t) / lq.r


def optimal_cost(lq: ScalarLQ, x0: float, n: int = 10_000) -> float:
    """Deterministic optimal cost ``P(0) x0^2``."""
    return float(riccati(lq, n)(0.0) * x0 * x0)


def feedback_cost(lq: ScalarLQ, gain: Callable[[float], float], x0: float, n: int = 10_000) -> float:
    """Expected cost of ``u = -gain x`` from ``x0``: ``P(0) x0^2 + c(0)``."""
    P, c = policy_value(lq, gain, n)
    return float(P(0.0) * x0 * x0 + c(0.0))
