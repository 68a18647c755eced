"""Learnable components: MLP policies, input-convex Lyapunov candidates,
and stable-by-construction linear operators (Householder + sigmoid scaling).

All forward maps record on the tape and accept either a single sample
(rank-1 input) or a batch (rank-2, one sample per row); parameters live in
flat name->array dicts so optimizers and checkpoints stay format-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateDirection, NoConvergence
from .rng import Rng
from .tape import Var, exp, log, relu, sigmoid, softplus, square, tanh


def _reciprocal_pos(s: Var) -> Var:
    """1/s for strictly positive scalar Vars, built from catalog primitives."""
    return exp(-log(s))

_ACTIVATIONS = {"tanh": tanh, "relu": relu, "softplus": softplus,
                "sigmoid": sigmoid}


def linear(x: Var, w: Var, b: Optional[Var] = None) -> Var:
    """Affine map for rank-1 (w @ x + b) or rank-2 row-batched inputs."""
    if len(x.shape) == 1:
        out = w @ x
    else:
        out = x @ w.T
    return out if b is None else out + b


def rowwise_sqnorm(x: Var) -> Var:
    """Squared Euclidean norm per sample; shape (1,) or (B, 1)."""
    sq = square(x)
    ones = x.tape.leaf(np.ones(x.shape[-1]))
    if len(x.shape) == 1:
        return (sq.dot(ones)).reshape((1,))
    return (sq @ ones).reshape((x.shape[0], 1))


# --------------------------------------------------------------------------
# Multilayer perceptron with optional bounded output
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MLPSpec:
    """Layer sizes (input..output), hidden activation, optional output bounds.

    With bounds (lo, hi), the output is lo + (hi - lo) * sigmoid(pre), which
    keeps it strictly inside the interval.
    """

    sizes: tuple
    activation: str = "tanh"
    bounds: Optional[tuple] = None

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bounds is not None:
            lo, hi = self.bounds
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"bad output bounds {self.bounds!r}")


def mlp_init(rng: Rng, spec: MLPSpec) -> dict:
    """Weights uniform in +-1/sqrt(fan_in), zero biases."""
    params = {}
    for i, (n_in, n_out) in enumerate(zip(spec.sizes[:-1], spec.sizes[1:])):
        bound = 1.0 / np.sqrt(n_in)
        params[f"w{i}"] = rng.stream(f"w{i}").uniform(-bound, bound, (n_out, n_in))
        params[f"b{i}"] = np.zeros(n_out)
    return params


def mlp_forward(params: dict, x: Var, spec: MLPSpec) -> Var:
    act = _ACTIVATIONS[spec.activation]
    h = x
    n_layers = len(spec.sizes) - 1
    for i in range(n_layers):
        h = linear(h, params[f"w{i}"], params[f"b{i}"])
        if i < n_layers - 1:
            h = act(h)
    if spec.bounds is not None:
        lo, hi = spec.bounds
        h = sigmoid(h) * (hi - lo) + lo
    return h


# --------------------------------------------------------------------------
# Input-convex network and positive-definite Lyapunov wrapper
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ICNNSpec:
    """Input-convex network: softplus activations, softplus-reparameterized
    nonnegative latent weights, scalar output."""

    in_dim: int
    widths: tuple


def icnn_init(rng: Rng, spec: ICNNSpec) -> dict:
    params = {}
    prev = None
    for i, w in enumerate(spec.widths):
        bound = 1.0 / np.sqrt(spec.in_dim)
        params[f"wx{i}"] = rng.stream(f"wx{i}").uniform(
            -bound, bound, (w, spec.in_dim))
        params[f"b{i}"] = np.zeros(w)
        if prev is not None:
            # raw value -1 puts the materialized softplus weight near 0.3
            params[f"wz{i}"] = rng.stream(f"wz{i}").uniform(-2.0, 0.0, (w, prev))
        prev = w
    params["wx_out"] = rng.stream("wx_out").uniform(
        -1.0 / np.sqrt(spec.in_dim), 1.0 / np.sqrt(spec.in_dim),
        (1, spec.in_dim))
    params["wz_out"] = rng.stream("wz_out").uniform(-2.0, 0.0, (1, prev))
    params["b_out"] = np.zeros(1)
    return params


def icnn_forward(params: dict, x: Var, spec: ICNNSpec) -> Var:
    """Convex nondecreasing composition; scalar per sample."""
    z = None
    for i in range(len(spec.widths)):
        pre = linear(x, params[f"wx{i}"], params[f"b{i}"])
        if z is not None:
            wz = softplus(params[f"wz{i}"])  # materialized nonnegative
            pre = pre + (wz @ z if len(z.shape) == 1 else z @ wz.T)
        z = softplus(pre)
    wz = softplus(params["wz_out"])
    out = linear(x, params["wx_out"], params["b_out"])
    out = out + (wz @ z if len(z.shape) == 1 else z @ wz.T)
    return out


@dataclass(frozen=True)
class LyapunovSpec:
    """Positive-definite wrapper around an ICNN.

    V(x) = ramp(g(x) - g(0)) + delta * |x|^2 with ramp a C^1 smoothed ReLU
    (zero on the negatives), so V(0) = 0 exactly and V(x) >= delta*|x|^2.
    """

    icnn: ICNNSpec
    delta: float = 1e-3
    knee: float = 0.1


def lyapunov_init(rng: Rng, spec: LyapunovSpec) -> dict:
    return icnn_init(rng, spec.icnn)


def positive_ramp(t: Var, knee: float) -> Var:
    """0 for t<=0, t^2/(2d) on (0,d), t-d/2 beyond; C^1 under the declared
    relu'(0)=0 policy."""
    d = float(knee)
    return (square(relu(t)) - square(relu(t - d))) * (1.0 / (2.0 * d))


def lyapunov_eval(params: dict, x: Var, spec: LyapunovSpec) -> Var:
    tape = x.tape
    zero = tape.leaf(np.zeros(spec.icnn.in_dim))
    g_x = icnn_forward(params, x, spec.icnn)
    g_0 = icnn_forward(params, zero, spec.icnn)
    return positive_ramp(g_x - g_0, spec.knee) + rowwise_sqnorm(x) * spec.delta


# --------------------------------------------------------------------------
# Stable linear operator via Householder reflectors + bounded singular values
# --------------------------------------------------------------------------

def householder_orthogonal(dirs: Var) -> Var:
    """Orthogonal Q = H_1 ... H_n from the rows of `dirs` (each H_i a
    reflector I - 2 v v^T / |v|^2)."""
    n = dirs.shape[0]
    if dirs.shape != (n, n):
        raise ValueError(f"direction matrix must be square, got {dirs.shape}")
    norms = np.linalg.norm(dirs.array, axis=1)
    if np.any(norms <= 1e-12):
        raise DegenerateDirection(
            f"reflector direction(s) {np.nonzero(norms <= 1e-12)[0].tolist()} "
            "have (near-)zero norm")
    tape = dirs.tape
    eye = tape.leaf(np.eye(n))
    q = None
    for i in range(n):
        v = dirs.slice(0, i, i + 1)  # (1, n)
        outer = v.T @ v
        inv_sq = _reciprocal_pos(v.sqnorm())
        h = eye - outer * inv_sq * 2.0
        q = h if q is None else q @ h
    return q


@dataclass(frozen=True)
class StableLinearSpec:
    """K = U diag(sigma) V^T with sigma in (lo, hi) subset of (0, 1), so the
    spectral norm (hence spectral radius) stays below hi by construction."""

    dim: int
    sigma_lo: float = 0.01
    sigma_hi: float = 0.99

    def __post_init__(self):
        if not (0.0 < self.sigma_lo < self.sigma_hi < 1.0):
            raise ValueError(
                f"need 0 < sigma_lo < sigma_hi < 1, got "
                f"({self.sigma_lo}, {self.sigma_hi})")


def stable_linear_init(rng: Rng, spec: StableLinearSpec) -> dict:
    n = spec.dim

    def unit_rows(label):
        m = rng.stream(label).normal((n, n))
        return m / np.linalg.norm(m, axis=1, keepdims=True)

    return {"u_dirs": unit_rows("u_dirs"), "v_dirs": unit_rows("v_dirs"),
            "s": np.zeros(n)}


def stable_linear_materialize(params: dict, spec: StableLinearSpec) -> Var:
    u = householder_orthogonal(params["u_dirs"])
    v = householder_orthogonal(params["v_dirs"])
    sig = sigmoid(params["s"]) * (spec.sigma_hi - spec.sigma_lo) + spec.sigma_lo
    return (u * sig) @ v.T  # column scaling realizes U diag(sig)


def spectral_radius(k) -> float:
    """Largest eigenvalue modulus (dense solver; verification only)."""
    arr = k.data if hasattr(k, "data") else np.asarray(k, dtype=np.float64)
    if arr.size == 0:
        return 0.0
    try:
        eig = np.linalg.eigvals(arr)
    except np.linalg.LinAlgError as e:
        raise NoConvergence(f"eigensolver failed: {e}") from None
    return float(np.max(np.abs(eig)))
