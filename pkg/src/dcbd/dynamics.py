"""Concrete block library: static arithmetic blocks, the scalar plant with
disturbance source, the RK4-discretized Van der Pol plant, and the learnable
policy / Lyapunov / Koopman blocks.

Each factory returns an immutable BlockDef; the registry at the bottom maps
the type names used in diagram JSON files to these factories.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Optional

import numpy as np

from .blocks import CONTINUOUS, BlockDef, SignalSpec
from .nn import (ICNNSpec, LyapunovSpec, MLPSpec, StableLinearSpec,
                 icnn_init, lyapunov_eval, lyapunov_init, mlp_forward,
                 mlp_init, stable_linear_init, stable_linear_materialize)
from .rng import Rng
from .tape import Var, clamp, concat

ONE = Fraction(1)


def split_last(v: Var, start: int, stop: int) -> Var:
    """Slice along the last axis (works for single samples and batches)."""
    return v.slice(len(v.shape) - 1, start, stop)


def join_last(parts) -> Var:
    return concat(parts, axis=len(parts[0].shape) - 1)


# --------------------------------------------------------------------------
# Integration helpers
# --------------------------------------------------------------------------

def rk4_step(f, x: Var, u: Var, h: float) -> Var:
    """Classical 4-stage Runge-Kutta step of x' = f(x, u); u held constant
    over the step (zero-order hold). Fully tape-recorded."""
    h = float(h)
    k1 = f(x, u)
    k2 = f(x + k1 * (h / 2.0), u)
    k3 = f(x + k2 * (h / 2.0), u)
    k4 = f(x + k3 * h, u)
    return x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)


def vdp_rhs(x: Var, u, mu) -> Var:
    """Van der Pol vector field: (x2, mu*(1 - x1^2)*x2 - x1 + u)."""
    x1 = split_last(x, 0, 1)
    x2 = split_last(x, 1, 2)
    dx2 = (1.0 - x1 * x1) * x2 * mu - x1
    if u is not None:
        dx2 = dx2 + u
    return join_last([x2, dx2])


# --------------------------------------------------------------------------
# Static blocks
# --------------------------------------------------------------------------

def gain_block(name: str = "gain", kappa: float = 1.0, dim: int = 1) -> BlockDef:
    def g(X, U, P, t):
        return {"y": U["u"] * P["kappa"]}

    return BlockDef(
        name, inputs=[SignalSpec("u", dim)], states=[],
        outputs=[SignalSpec("y", dim)], transitions={}, output_map=g,
        init={}, params={"kappa": np.asarray(float(kappa))},
        feedthrough={("u", "y")})


def sum_block(name: str = "sum", dim: int = 1) -> BlockDef:
    """Tracking error: e = r - y."""

    def g(X, U, P, t):
        return {"e": U["r"] - U["y"]}

    return BlockDef(
        name, inputs=[SignalSpec("r", dim), SignalSpec("y", dim)], states=[],
        outputs=[SignalSpec("e", dim)], transitions={}, output_map=g,
        init={}, feedthrough={("r", "e"), ("y", "e")})


def saturate_block(name: str = "sat", lo: float = -1.0, hi: float = 1.0,
                   dim: int = 1) -> BlockDef:
    def g(X, U, P, t):
        return {"y": clamp(U["u"], lo, hi)}

    return BlockDef(
        name, inputs=[SignalSpec("u", dim)], states=[],
        outputs=[SignalSpec("y", dim)], transitions={}, output_map=g,
        init={}, feedthrough={("u", "y")})


def const_source_block(name: str = "const", value=0.0, period=ONE) -> BlockDef:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))

    def g(X, U, P, t):
        return {"y": P["value"]}

    return BlockDef(
        name, inputs=[], states=[], outputs=[SignalSpec("y", arr.size, period)],
        transitions={}, output_map=g, init={}, params={"value": arr},
        periods=[period])


def disturbance_source_block(name: str = "dist", w_max: float = 0.1,
                             seed: int = 0, n_steps: int = 100,
                             period=ONE) -> BlockDef:
    """Uniform i.i.d. samples in [-w_max, w_max] from a counter-based
    generator; the realization is a (frozen) parameter vector, so the same
    seed always yields the same sequence and gradients can reach it."""
    if w_max < 0:
        raise ValueError("w_max must be nonnegative")
    seq = Rng(seed).stream("disturbance").uniform(-w_max, w_max, (n_steps + 1,))
    tau = Fraction(period)

    def g(X, U, P, t):
        k = int(Fraction(t) / tau)
        if k > n_steps:
            raise ValueError(
                f"{name}: sample index {k} beyond declared horizon {n_steps}")
        return {"w": P["w_seq"].slice(0, k, k + 1)}

    return BlockDef(
        name, inputs=[], states=[], outputs=[SignalSpec("w", 1, tau)],
        transitions={}, output_map=g, init={}, params={"w_seq": seq},
        periods=[tau])


# --------------------------------------------------------------------------
# Plants
# --------------------------------------------------------------------------

def scalar_plant_block(name: str = "plant", a: float = 1.02, b: float = 1.0,
                       x0: float = 1.0, period=ONE) -> BlockDef:
    """x+ = a*x + b*u + w, y = x (no feedthrough)."""
    if b <= 0:
        raise ValueError("b must be positive")
    tau = Fraction(period)

    def f(X, U, P, t):
        return {"x": X["x"] * P["a"] + U["u"] * P["b"] + U["w"]}

    def g(X, U, P, t):
        return {"y": X["x"]}

    return BlockDef(
        name, inputs=[SignalSpec("u", 1, tau), SignalSpec("w", 1, tau)],
        states=[SignalSpec("x", 1, tau)], outputs=[SignalSpec("y", 1, tau)],
        transitions={tau: f}, output_map=g,
        init={"x": np.asarray([float(x0)])},
        params={"a": np.asarray(float(a)), "b": np.asarray(float(b))},
        feedthrough=set())


def vdp_rk4_block(name: str = "vdp", mu: float = 1.0, period=Fraction(1, 10),
                  substeps: int = 1, x0=(1.0, 0.0)) -> BlockDef:
    """Van der Pol plant discretized by RK4 over one sampling period."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    tau = Fraction(period)
    h = float(tau) / substeps

    def f(X, U, P, t):
        x = X["x"]
        for _ in range(substeps):
            x = rk4_step(lambda xx, uu: vdp_rhs(xx, uu, P["mu"]), x, U["u"], h)
        return {"x": x}

    def g(X, U, P, t):
        return {"y": X["x"]}

    return BlockDef(
        name, inputs=[SignalSpec("u", 1, tau)],
        states=[SignalSpec("x", 2, tau)], outputs=[SignalSpec("y", 2, tau)],
        transitions={tau: f}, output_map=g,
        init={"x": np.asarray(x0, dtype=np.float64)},
        params={"mu": np.asarray(float(mu))}, feedthrough=set())


# --------------------------------------------------------------------------
# Learnable blocks
# --------------------------------------------------------------------------

def mlp_policy_block(name: str, spec: MLPSpec, params: dict, state_dim: int,
                     ref_dim: int = 0, period=ONE) -> BlockDef:
    """Static feedback policy u = pi(x[, r]); bounded when the spec says so."""
    tau = Fraction(period)
    out_dim = spec.sizes[-1]
    inputs = [SignalSpec("x", state_dim, tau)]
    if ref_dim:
        inputs.append(SignalSpec("r", ref_dim, tau))

    def g(X, U, P, t):
        xin = U["x"] if not ref_dim else join_last([U["x"], U["r"]])
        return {"u": mlp_forward(P, xin, spec)}

    ft = {("x", "u")} | ({("r", "u")} if ref_dim else set())
    return BlockDef(
        name, inputs=inputs, states=[], outputs=[SignalSpec("u", out_dim, tau)],
        transitions={}, output_map=g, init={}, params=dict(params),
        feedthrough=ft)


def icnn_lyapunov_block(name: str, spec: LyapunovSpec, params: dict,
                        state_dim: int, period=ONE) -> BlockDef:
    tau = Fraction(period)

    def g(X, U, P, t):
        return {"v": lyapunov_eval(P, U["x"], spec)}

    return BlockDef(
        name, inputs=[SignalSpec("x", state_dim, tau)], states=[],
        outputs=[SignalSpec("v", 1, tau)], transitions={}, output_map=g,
        init={}, params=dict(params), feedthrough={("x", "v")})


def koopman_encoder_block(name: str, spec: MLPSpec, params: dict,
                          period=ONE) -> BlockDef:
    tau = Fraction(period)

    def g(X, U, P, t):
        return {"z": mlp_forward(P, U["y"], spec)}

    return BlockDef(
        name, inputs=[SignalSpec("y", spec.sizes[0], tau)], states=[],
        outputs=[SignalSpec("z", spec.sizes[-1], tau)], transitions={},
        output_map=g, init={}, params=dict(params), feedthrough={("y", "z")})


def koopman_decoder_block(name: str, spec: MLPSpec, params: dict,
                          period=ONE) -> BlockDef:
    tau = Fraction(period)

    def g(X, U, P, t):
        return {"y": mlp_forward(P, U["z"], spec)}

    return BlockDef(
        name, inputs=[SignalSpec("z", spec.sizes[0], tau)], states=[],
        outputs=[SignalSpec("y", spec.sizes[-1], tau)], transitions={},
        output_map=g, init={}, params=dict(params), feedthrough={("z", "y")})


def koopman_operator_block(name: str, spec: StableLinearSpec, params: dict,
                           z0=None, period=ONE) -> BlockDef:
    """Stateful latent dynamics z+ = K z with K stable by construction.

    The initial latent state is normally set per execution (from the encoded
    first observation); the block keeps a zero default.
    """
    tau = Fraction(period)
    n = spec.dim

    def materialize(P, tape):
        def build():
            return stable_linear_materialize(P, spec)

        key = ("koopman_K", id(P.get("s")))
        hit = tape.scratch.get(key)
        if hit is None:
            hit = build()
            tape.scratch[key] = hit
        return hit

    def f(X, U, P, t):
        k = materialize(P, X["z"].tape)
        z = X["z"]
        return {"z": k @ z if len(z.shape) == 1 else z @ k.T}

    def g(X, U, P, t):
        return {"z_out": X["z"]}

    return BlockDef(
        name, inputs=[], states=[SignalSpec("z", n, tau)],
        outputs=[SignalSpec("z_out", n, tau)], transitions={tau: f},
        output_map=g,
        init={"z": np.zeros(n) if z0 is None else np.asarray(z0)},
        params=dict(params), feedthrough=set())


# --------------------------------------------------------------------------
# Registry (diagram JSON block types)
# --------------------------------------------------------------------------

def _mlp_from_cfg(cfg, key, default_sizes, bounds=None):
    sizes = tuple(cfg.get("sizes", default_sizes))
    spec = MLPSpec(sizes, activation=cfg.get("activation", "tanh"),
                   bounds=bounds)
    params = cfg.get("params")
    if params is None:
        params = mlp_init(Rng(int(cfg.get("seed", 0))).stream(key), spec)
    else:
        params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    return spec, params


def _make_gain(name, cfg):
    return gain_block(name, kappa=cfg.get("kappa", 1.0), dim=cfg.get("dim", 1))


def _make_sum(name, cfg):
    return sum_block(name, dim=cfg.get("dim", 1))


def _make_saturate(name, cfg):
    return saturate_block(name, lo=cfg.get("lo", -1.0), hi=cfg.get("hi", 1.0),
                          dim=cfg.get("dim", 1))


def _make_const(name, cfg):
    return const_source_block(name, value=cfg.get("value", 0.0),
                              period=Fraction(cfg.get("period", "1")))


def _make_disturbance(name, cfg):
    return disturbance_source_block(
        name, w_max=cfg.get("w_max", 0.1), seed=int(cfg.get("seed", 0)),
        n_steps=int(cfg.get("n_steps", 1000)),
        period=Fraction(cfg.get("period", "1")))


def _make_scalar_plant(name, cfg):
    return scalar_plant_block(name, a=cfg.get("a", 1.02), b=cfg.get("b", 1.0),
                              x0=cfg.get("x0", 1.0),
                              period=Fraction(cfg.get("period", "1")))


def _make_vdp(name, cfg):
    return vdp_rk4_block(name, mu=cfg.get("mu", 1.0),
                         period=Fraction(cfg.get("period", "1/10")),
                         substeps=int(cfg.get("substeps", 1)),
                         x0=cfg.get("x0", (1.0, 0.0)))


def _make_mlp_policy(name, cfg):
    state_dim = int(cfg.get("state_dim", 2))
    ref_dim = int(cfg.get("ref_dim", 0))
    bounds = tuple(cfg["bounds"]) if cfg.get("bounds") else None
    spec, params = _mlp_from_cfg(
        cfg, name, (state_dim + ref_dim, 32, 32, 1), bounds=bounds)
    return mlp_policy_block(name, spec, params, state_dim, ref_dim,
                            period=Fraction(cfg.get("period", "1")))


def _make_icnn_lyapunov(name, cfg):
    state_dim = int(cfg.get("state_dim", 2))
    spec = LyapunovSpec(ICNNSpec(state_dim, tuple(cfg.get("widths", (32, 32)))),
                        delta=cfg.get("delta", 1e-3),
                        knee=cfg.get("knee", 0.1))
    params = cfg.get("params")
    if params is None:
        params = lyapunov_init(Rng(int(cfg.get("seed", 0))).stream(name), spec)
    else:
        params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    return icnn_lyapunov_block(name, spec, params, state_dim,
                               period=Fraction(cfg.get("period", "1")))


def _make_koopman_encoder(name, cfg):
    spec, params = _mlp_from_cfg(cfg, name, (2, 64, 64, 8))
    return koopman_encoder_block(name, spec, params,
                                 period=Fraction(cfg.get("period", "1")))


def _make_koopman_decoder(name, cfg):
    spec, params = _mlp_from_cfg(cfg, name, (8, 64, 64, 2))
    return koopman_decoder_block(name, spec, params,
                                 period=Fraction(cfg.get("period", "1")))


def _make_koopman_operator(name, cfg):
    spec = StableLinearSpec(int(cfg.get("dim", 8)),
                            sigma_lo=cfg.get("sigma_lo", 0.01),
                            sigma_hi=cfg.get("sigma_hi", 0.99))
    params = cfg.get("params")
    if params is None:
        params = stable_linear_init(
            Rng(int(cfg.get("seed", 0))).stream(name), spec)
    else:
        params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    return koopman_operator_block(name, spec, params,
                                  period=Fraction(cfg.get("period", "1")))


REGISTRY = {
    "gain": _make_gain,
    "sum": _make_sum,
    "saturate": _make_saturate,
    "const_source": _make_const,
    "disturbance": _make_disturbance,
    "scalar_plant": _make_scalar_plant,
    "vdp_rk4": _make_vdp,
    "mlp_policy": _make_mlp_policy,
    "icnn_lyapunov": _make_icnn_lyapunov,
    "koopman_encoder": _make_koopman_encoder,
    "koopman_decoder": _make_koopman_decoder,
    "koopman_operator": _make_koopman_operator,
}


def make_block(name: str, cfg: dict) -> BlockDef:
    """Instantiate a registered block type from a JSON-style config."""
    kind = cfg.get("type")
    if kind not in REGISTRY:
        raise KeyError(f"unknown block type {kind!r} for block {name!r}")
    return REGISTRY[kind](name, cfg)
