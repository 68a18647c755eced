"""NumPy implementations of the arithmetic kernels.

This is the fallback lane used when the compiled core is unavailable (and
the reference semantics for it). All functions take C-contiguous float64
arrays and return fresh arrays; broadcasting is limited to scalar-with-array
and row-vector-with-matrix, which is what the tape's shape rules admit.
"""

from __future__ import annotations

import numpy as np


def _c(a):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


# --- elementwise binary ---------------------------------------------------

def add(a, b):
    return _c(np.add(a, b))


def sub(a, b):
    return _c(np.subtract(a, b))


def mul(a, b):
    return _c(np.multiply(a, b))


def smul(a, c):
    return _c(a * float(c))


def reduce_to(g, shape):
    """Sum `g` down to `shape` (inverse of the broadcast in add/sub/mul)."""
    shape = tuple(shape)
    if g.shape == shape:
        return _c(g)
    if shape == ():
        return np.asarray(g.sum(), dtype=np.float64)
    # row-vector case: (n, m) cotangent reduced to (m,)
    if g.ndim == 2 and shape == (g.shape[1],):
        return _c(g.sum(axis=0))
    raise ValueError(f"cannot reduce {g.shape} to {shape}")


# --- elementwise unary ----------------------------------------------------

def neg(x):
    return _c(np.negative(x))


def abs_(x):
    return _c(np.abs(x))


def abs_bwd(g, x):
    return _c(g * np.sign(x))  # sign(0) = 0: subgradient policy at the kink


def square(x):
    return _c(np.square(x))


def square_bwd(g, x):
    return _c(2.0 * x * g)


def sqrt(x):
    return _c(np.sqrt(x))


def sqrt_bwd(g, y):
    out = np.zeros_like(y)
    nz = y != 0.0  # derivative declared 0 at the origin
    np.divide(g, 2.0 * y, out=out, where=nz)
    return _c(out)


def exp(x):
    return _c(np.exp(x))


def exp_bwd(g, y):
    return _c(g * y)


def log(x):
    return _c(np.log(x))


def log_bwd(g, x):
    return _c(g / x)


def tanh(x):
    return _c(np.tanh(x))


def tanh_bwd(g, y):
    return _c(g * (1.0 - y * y))


def sigmoid(x):
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _c(out)


def sigmoid_bwd(g, y):
    return _c(g * y * (1.0 - y))


def relu(x):
    return _c(np.maximum(x, 0.0))


def relu_bwd(g, x):
    return _c(g * (x > 0.0))  # derivative 0 at exactly 0


def softplus(x):
    return _c(np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0))


def softplus_bwd(g, x):
    return _c(g * sigmoid(x))


def maxconst(x, c):
    return _c(np.maximum(x, float(c)))


def maxconst_bwd(g, x, c):
    return _c(g * (x > float(c)))


def clamp(x, lo, hi):
    return _c(np.clip(x, float(lo), float(hi)))


def clamp_bwd(g, x, lo, hi):
    inside = (x > float(lo)) & (x < float(hi))  # zero at and beyond bounds
    return _c(g * inside)


# --- reductions -----------------------------------------------------------

def sum_all(x):
    return np.asarray(np.sum(x), dtype=np.float64)


def mean_all(x):
    return np.asarray(np.mean(x), dtype=np.float64)


def dot(a, b):
    return np.asarray(np.dot(a, b), dtype=np.float64)


def sqnorm(x):
    return np.asarray(np.dot(x.ravel(), x.ravel()), dtype=np.float64)


def fill(shape, value):
    return np.full(tuple(shape), float(value), dtype=np.float64)


def maxreduce(x, axis):
    """Max along `axis` (None = global). Returns (values, flat argmax indices).

    Ties resolve to the lowest index, which is also the backward policy.
    """
    if axis is None:
        idx = np.asarray(np.argmax(x), dtype=np.intp)
        val = np.asarray(x.ravel()[idx], dtype=np.float64)
        return val, idx
    vals = np.max(x, axis=axis)
    idx = np.argmax(x, axis=axis).astype(np.intp)
    return _c(vals), idx


def maxreduce_bwd(g, x_shape, idx, axis):
    out = np.zeros(tuple(x_shape), dtype=np.float64)
    if axis is None:
        out.ravel()[int(idx)] = float(g)
        return out
    np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
    return out


# --- linear algebra -------------------------------------------------------

def matmul(a, b):
    return _c(np.matmul(a, b))


def transpose(a):
    return _c(a.T)
