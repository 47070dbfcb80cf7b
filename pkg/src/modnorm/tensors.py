"""Dense float64 tensor helpers, deterministic initializers, and
finite-difference probes.

Everything here is a thin, contract-checked layer over numpy. All arrays are
float64; all randomness is explicit (seed in, value out).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


def as_tensor(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _check_finite(x: Array, what: str) -> Array:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Array:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return a + b


def scale(c: float, a) -> Array:
    return float(c) * as_tensor(a)


def elementwise_mul(a, b) -> Array:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_mul: shapes {a.shape} and {b.shape} differ")
    return a * b


def matmul(a, b) -> Array:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else -1]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return a @ b


def transpose(a) -> Array:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got shape {a.shape}")
    return a.T


def reshape(a, shape) -> Array:
    a = as_tensor(a)
    try:
        return a.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {tuple(shape)}") from e


def reduce_sum(a, axis: int) -> Array:
    return as_tensor(a).sum(axis=axis)


def reduce_mean(a, axis: int) -> Array:
    return as_tensor(a).mean(axis=axis)


def cross_correlate2d(kernel, x, pad: int | None = None) -> Array:
    """2-D cross-correlation with same padding and stride 1.

    kernel: (d_out, d_in, K, K); x: (..., d_in, H, W); output (..., d_out, H, W).
    """
    kernel, x = as_tensor(kernel), as_tensor(x)
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"cross_correlate2d: kernel shape {kernel.shape} is not (d_out, d_in, K, K)")
    if x.ndim < 3:
        raise ShapeError(f"cross_correlate2d: input shape {x.shape} has no (channel, H, W) axes")
    d_out, d_in, k, _ = kernel.shape
    if x.shape[-3] != d_in:
        raise ShapeError(
            f"cross_correlate2d: kernel expects {d_in} input channels, input shape {x.shape} has {x.shape[-3]}"
        )
    lead = x.shape[:-3]
    h, w = x.shape[-2], x.shape[-1]
    xb = x.reshape((-1, d_in, h, w))
    lo = (k - 1) // 2 if pad is None else pad
    hi = k - 1 - lo if pad is None else pad
    xp = np.pad(xb, ((0, 0), (0, 0), (lo, hi), (lo, hi)))
    out = np.zeros((xb.shape[0], d_out, h, w))
    for i in range(k):
        for j in range(k):
            out += np.einsum("oc,bchw->bohw", kernel[:, :, i, j], xp[:, :, i : i + h, j : j + w])
    return out.reshape(lead + (d_out, h, w))


_ARITH = {
    "add": add,
    "scale": scale,
    "elementwise_mul": elementwise_mul,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "cross_correlate2d": cross_correlate2d,
}


def tensor_arith(op_kind: str, *operands) -> Array:
    """Dispatch an arithmetic op by name. Inputs are never modified."""
    if op_kind not in _ARITH:
        raise ValueError(f"unknown op kind {op_kind!r}; valid: {sorted(_ARITH)}")
    return _ARITH[op_kind](*operands)


# ---------------------------------------------------------------------------
# finite-difference probes
# ---------------------------------------------------------------------------

def _default_eps(x: Array) -> float:
    # scale the probe step with the input's magnitude so the relative
    # perturbation stays comparable across scales
    return 1e-4 * (1.0 + float(np.sqrt(np.mean(np.square(x)))))


def finite_diff_jvp(f: Callable, x, dx, eps: float | None = None) -> Array:
    """Central-difference estimate of the directional derivative of f at x
    along dx: (f(x + eps dx) - f(x - eps dx)) / (2 eps)."""
    x, dx = as_tensor(x), as_tensor(dx)
    if eps is None:
        eps = _default_eps(x)
    if eps <= 0:
        raise ValueError("eps must be positive")
    hi = as_tensor(f(x + eps * dx))
    lo = as_tensor(f(x - eps * dx))
    return _check_finite((hi - lo) / (2.0 * eps), "finite_diff_jvp output")


def finite_diff_bilinear(f: Callable, x, dx1, dx2, eps: float | None = None) -> Array:
    """Four-point stencil estimate of the second-derivative bilinear form
    dx1 . H(f)(x) . dx2."""
    x, d1, d2 = as_tensor(x), as_tensor(dx1), as_tensor(dx2)
    if eps is None:
        eps = _default_eps(x)
    if eps <= 0:
        raise ValueError("eps must be positive")
    pp = as_tensor(f(x + eps * d1 + eps * d2))
    pm = as_tensor(f(x + eps * d1 - eps * d2))
    mp = as_tensor(f(x - eps * d1 + eps * d2))
    mm = as_tensor(f(x - eps * d1 - eps * d2))
    out = (pp - pm - mp + mm) / (4.0 * eps * eps)
    return _check_finite(out, "finite_diff_bilinear output")


# ---------------------------------------------------------------------------
# initializers
# ---------------------------------------------------------------------------

def orthogonal_init(d_out: int, d_in: int, seed) -> Array:
    """Deterministic semi-orthogonal d_out x d_in matrix with unit spectral norm.

    QR of a seeded Gaussian, diagonal sign-fixed so the result is unique.
    """
    if d_out < 1 or d_in < 1:
        raise ValueError(f"dimensions must be >= 1, got ({d_out}, {d_in})")
    rng = np.random.default_rng(seed)
    tall, short = max(d_out, d_in), min(d_out, d_in)
    g = rng.standard_normal((tall, short))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    return q if d_out >= d_in else q.T


def unit_ball_gaussian_init(n: int, d: int, seed) -> Array:
    """d x n matrix of Gaussian columns rescaled onto the unit Euclidean sphere."""
    if n < 1 or d < 1:
        raise ValueError(f"dimensions must be >= 1, got ({n}, {d})")
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((d, n))
    norms = np.linalg.norm(e, axis=0)
    norms[norms == 0] = 1.0
    return e / norms


def gaussian(shape, seed) -> Array:
    return np.random.default_rng(seed).standard_normal(shape)


def gelu_scalar(x: float) -> float:
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
