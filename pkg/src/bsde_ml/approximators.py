"""Trainable maps ``(t, x) -> R^m`` with hand-written gradients, and Adam.

Every approximator is evaluated on a batch: ``t`` of shape ``(N,)`` and ``x``
of shape ``(N, dim_x)`` give an output of shape ``(N, m)``. ``forward``
caches what ``backward`` needs; ``backward(upstream)`` returns the gradient
of ``sum(upstream * output)`` with respect to the flat parameter vector.
"""

from __future__ import annotations

import copy
import math
from enum import Enum

import numpy as np

ARCH_HEADER_VERSION = 1


class ParamFn:
    """Common surface of the approximators."""

    arch = "base"
    dim_x: int
    output_dim: int

    def __init__(self):
        self._cache = None

    @property
    def params(self) -> np.ndarray:
        raise NotImplementedError

    @params.setter
    def params(self, value) -> None:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return self.params.size

    def forward(self, t, x, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, upstream) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t, x, training: bool = False) -> np.ndarray:
        return self.forward(t, x, training)

    def copy(self) -> "ParamFn":
        return copy.deepcopy(self)

    def _inputs(self, t, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.dim_x:
            raise ValueError(f"expected state dimension {self.dim_x}, got {x.shape[1]}")
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
        return t, x

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        return self._cache


class ZeroFn(ParamFn):
    """The parameter-free zero map; the initial policy."""

    arch = "zero"

    def __init__(self, dim_x: int, output_dim: int):
        super().__init__()
        self.dim_x, self.output_dim = dim_x, output_dim

    @property
    def params(self):
        return np.zeros(0)

    @params.setter
    def params(self, value):
        if np.size(value):
            raise ValueError("ZeroFn has no parameters")

    def forward(self, t, x, training=False):
        t, x = self._inputs(t, x)
        self._cache = len(x)
        return np.zeros((len(x), self.output_dim))

    def backward(self, upstream):
        self._need_cache()
        return np.zeros(0)


class LinearBasisFn(ParamFn):
    """Output ``sum_p theta_p * basis_p(t, x)``, linear in the parameters."""

    arch = "linear-basis"

    def __init__(self, dim_x: int, output_dim: int, n_params: int, theta=None):
        super().__init__()
        self.dim_x, self.output_dim = dim_x, output_dim
        self._theta = np.zeros(n_params) if theta is None else np.array(theta, dtype=float).reshape(n_params)

    def basis(self, t, x) -> np.ndarray:
        """Shape ``(N, n_params, output_dim)``."""
        raise NotImplementedError

    @property
    def params(self):
        return self._theta

    @params.setter
    def params(self, value):
        self._theta = np.array(value, dtype=float).reshape(self._theta.shape)

    def forward(self, t, x, training=False):
        t, x = self._inputs(t, x)
        phi = self.basis(t, x)
        self._cache = phi
        return np.einsum("npm,p->nm", phi, self._theta)

    def backward(self, upstream):
        phi = self._need_cache()
        return np.einsum("npm,nm->p", phi, np.asarray(upstream).reshape(len(phi), self.output_dim))


class Basis(str, Enum):
    Z_WELL = "z_well"
    Z_MIS = "z_mis"
    Y_WELL = "y_well"
    Y_MIS = "y_mis"


class LinearFamily(LinearBasisFn):
    """Scalar-parameter families used for the Brownian benchmark.

    ``z_well``: ``2 theta x``; ``z_mis``: ``4 theta x |x|^2``;
    ``y_well``: ``theta |x|^2``; ``y_mis``: ``theta |x|^4``.
    """

    arch = "linear-family"

    def __init__(self, basis: Basis | str, dim_x: int, theta: float = 0.0):
        self.tag = Basis(basis)
        out = dim_x if self.tag in (Basis.Z_WELL, Basis.Z_MIS) else 1
        super().__init__(dim_x, out, 1, [theta])

    @property
    def theta(self) -> float:
        return float(self._theta[0])

    def basis(self, t, x):
        sq = np.sum(x * x, axis=1, keepdims=True)
        if self.tag is Basis.Z_WELL:
            b = 2.0 * x
        elif self.tag is Basis.Z_MIS:
            b = 4.0 * x * sq
        elif self.tag is Basis.Y_WELL:
            b = sq
        else:
            b = sq * sq
        return b[:, None, :]


class PolynomialFeedback(LinearBasisFn):
    """Linear state feedback with polynomial-in-time gains.

    ``out_i = sum_{j <= degree} sum_l theta[i, j, l] t^j x_l``.
    """

    arch = "poly-feedback"

    def __init__(self, dim_x: int, output_dim: int, degree: int = 3, theta=None):
        self.degree = degree
        super().__init__(dim_x, output_dim, output_dim * (degree + 1) * dim_x, theta)

    def basis(self, t, x):
        n = len(x)
        powers = t[:, None] ** np.arange(self.degree + 1)[None, :]      # (N, J)
        feats = (powers[:, :, None] * x[:, None, :]).reshape(n, -1)      # (N, J*L)
        k = feats.shape[1]
        out = np.zeros((n, self.output_dim * k, self.output_dim))
        for i in range(self.output_dim):
            out[:, i * k:(i + 1) * k, i] = feats
        return out


class MlpBN(ParamFn):
    """Input batch norm, one tanh hidden layer, linear read-out.

    In training mode the input is normalized with batch statistics and the
    running statistics are updated (the running variance uses the unbiased
    estimator). Evaluation mode uses the running statistics only.
    """

    arch = "mlp-bn"

    def __init__(self, dim_x: int, output_dim: int, hidden: int = 16, momentum: float = 0.1,
                 eps: float = 1e-5, seed: int = 0, zero_output: bool = False):
        super().__init__()
        self.dim_x, self.output_dim, self.hidden = dim_x, output_dim, hidden
        self.momentum, self.eps = momentum, eps
        d = dim_x + 1
        rng = np.random.default_rng(seed)
        shapes = [("gamma", (d,)), ("beta", (d,)), ("W1", (d, hidden)), ("b1", (hidden,)),
                  ("W2", (hidden, output_dim)), ("b2", (output_dim,))]
        self._slices = {}
        offset = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self._slices[name] = (slice(offset, offset + size), shape)
            offset += size
        self._theta = np.zeros(offset)
        self._view("gamma")[:] = 1.0
        for w, b, fan_in in (("W1", "b1", d), ("W2", "b2", hidden)):
            bound = 1.0 / math.sqrt(fan_in)
            self._view(w)[:] = rng.uniform(-bound, bound, self._slices[w][1])
            self._view(b)[:] = rng.uniform(-bound, bound, self._slices[b][1])
        if zero_output:
            self._view("W2")[:] = 0.0
            self._view("b2")[:] = 0.0
        self.running_mean = np.zeros(d)
        self.running_var = np.ones(d)

    def _view(self, name):
        sl, shape = self._slices[name]
        return self._theta[sl].reshape(shape)

    @property
    def params(self):
        return self._theta

    @params.setter
    def params(self, value):
        value = np.asarray(value, dtype=float)
        if value.shape != self._theta.shape:
            raise ValueError(f"expected {self._theta.size} parameters, got {value.size}")
        self._theta[:] = value

    def forward(self, t, x, training=False):
        t, x = self._inputs(t, x)
        inp = np.column_stack([t, x])
        if training:
            mean = inp.mean(axis=0)
            var = inp.var(axis=0)
            n = len(inp)
            unbiased = var * n / max(n - 1, 1)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        xhat = (inp - mean) / np.sqrt(var + self.eps)
        h = xhat * self._view("gamma") + self._view("beta")
        a = np.tanh(h @ self._view("W1") + self._view("b1"))
        self._cache = (xhat, h, a)
        return a @ self._view("W2") + self._view("b2")

    def backward(self, upstream):
        xhat, h, a = self._need_cache()
        g = np.asarray(upstream, dtype=float).reshape(len(a), self.output_dim)
        grad = np.zeros_like(self._theta)

        def put(name, value):
            grad[self._slices[name][0]] = value.ravel()

        put("W2", a.T @ g)
        put("b2", g.sum(axis=0))
        da = (g @ self._view("W2").T) * (1.0 - a * a)
        put("W1", h.T @ da)
        put("b1", da.sum(axis=0))
        dh = da @ self._view("W1").T
        # normalization statistics depend on the data only, never on parameters
        put("gamma", (dh * xhat).sum(axis=0))
        put("beta", dh.sum(axis=0))
        return grad


class Adam:
    """Adam with bias correction and coupled L2 weight decay."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.eps, self.weight_decay = eps, weight_decay
        self.m = None
        self.v = None
        self.step_count = 0

    def step(self, params, grads) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        grads = np.asarray(grads, dtype=float)
        if params.shape != grads.shape:
            raise ValueError(f"params {params.shape} and grads {grads.shape} differ in shape")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        g = grads + self.weight_decay * params
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1 ** self.step_count)
        vhat = self.v / (1 - self.beta2 ** self.step_count)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(opt: Adam, params, grads) -> np.ndarray:
    return opt.step(params, grads)


# ------------------------------------------------------------ snapshots


def save_params(fn: ParamFn, path) -> None:
    """CSV snapshot: a ``# arch=<tag> version=<n> ...`` header, then one value per line.

    For :class:`MlpBN` the running mean and variance follow the parameters.
    """
    header = f"# arch={fn.arch} version={ARCH_HEADER_VERSION} n_params={fn.n_params}"
    values = list(fn.params)
    if isinstance(fn, MlpBN):
        header += f" running_stats={2 * len(fn.running_mean)}"
        values += list(fn.running_mean) + list(fn.running_var)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for v in values:
            fh.write(repr(float(v)) + "\n")


def load_params(fn: ParamFn, path) -> ParamFn:
    with open(path) as fh:
        header = fh.readline().strip()
        fields = dict(item.split("=", 1) for item in header.lstrip("# ").split())
        if fields.get("arch") != fn.arch:
            raise ValueError(f"snapshot architecture {fields.get('arch')!r} != {fn.arch!r}")
        if int(fields.get("version", -1)) != ARCH_HEADER_VERSION:
            raise ValueError(f"unsupported snapshot version {fields.get('version')}")
        values = np.array([float(line) for line in fh if line.strip()])
    n = int(fields["n_params"])
    fn.params = values[:n]
    if isinstance(fn, MlpBN):
        d = len(fn.running_mean)
        fn.running_mean = values[n:n + d].copy()
        fn.running_var = values[n + d:n + 2 * d].copy()
    return fn
