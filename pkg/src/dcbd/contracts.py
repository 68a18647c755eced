"""Assume-guarantee contracts with interval-box semantics, and residual-based
contracts as differentiable trajectory certificates.

A-G contracts are normative: assumptions bound admissible input values,
guarantees bound realized signal values, and compatibility of a connection
means the upstream guarantee box fits inside the downstream assumption box
(a sound, conservative approximation of set inclusion).

Residual contracts are quantitative: a tape-differentiable map whose
componentwise nonpositivity along a realized execution certifies the
guarantee for that execution. Some residuals depend only on parameters (the
gain-stability case); these are flagged `parameter_level` because their
satisfaction is universally quantified rather than per-trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GridMismatch, Incompatible, PortMismatch
from .tape import Tape, Var, concat, max_reduce

SAT_TOL = 1e-9  # residual <= 0 is tested as <= +SAT_TOL to absorb rounding


# --------------------------------------------------------------------------
# Interval boxes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    """Axis-aligned box over one signal's values; +-inf entries allowed."""

    lo: tuple
    hi: tuple

    @staticmethod
    def of(lo, hi) -> "Interval":
        lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
        if lo.shape != hi.shape:
            raise PortMismatch(f"interval bounds {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("interval needs lo <= hi componentwise")
        return Interval(tuple(lo.tolist()), tuple(hi.tolist()))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, other: "Interval") -> bool:
        """self contains other (other fits inside self)."""
        return bool(np.all(np.asarray(self.lo) <= np.asarray(other.lo))
                    and np.all(np.asarray(other.hi) <= np.asarray(self.hi)))

    def contains_point(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(np.asarray(self.lo) <= x)
                    and np.all(x <= np.asarray(self.hi)))

    def violation_of(self, inner: "Interval") -> float:
        """How far `inner` sticks out of self (<= 0 means contained)."""
        lo_gap = np.max(np.asarray(self.lo) - np.asarray(inner.lo))
        hi_gap = np.max(np.asarray(inner.hi) - np.asarray(self.hi))
        return float(max(lo_gap, hi_gap))


@dataclass(frozen=True)
class AGContract:
    """Interval assumptions on inputs plus interval guarantees on signals."""

    assumptions: dict = field(default_factory=dict)  # input name -> Interval
    guarantees: dict = field(default_factory=dict)  # signal name -> Interval

    def rename(self, tr: Callable[[str], str]) -> "AGContract":
        return AGContract(
            assumptions={tr(k): v for k, v in self.assumptions.items()},
            guarantees={tr(k): v for k, v in self.guarantees.items()})


@dataclass
class ContractReport:
    """Outcome of one contract check/evaluation."""

    kind: str  # 'ag-compatibility' | 'residual'
    satisfied: bool
    worst: float
    location: Optional[tuple] = None  # (signal-or-pair, index) of the worst
    components: list = field(default_factory=list)
    per_step: Optional[list] = None  # residual value per time index
    parameter_level: bool = False
    tol: float = SAT_TOL
    name: str = ""

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "satisfied": bool(self.satisfied),
            "worst": float(self.worst),
            "location": list(self.location) if self.location else None,
            "components": [float(c) for c in self.components],
            "per_step": ([float(v) for v in self.per_step]
                         if self.per_step is not None else None),
            "parameter_level": bool(self.parameter_level),
            "tol": self.tol,
        }


def check_ag_compatibility(c1: AGContract, c2: AGContract,
                           pairs: Sequence) -> ContractReport:
    """Is every guaranteed value of a connected output admissible downstream?

    `pairs` lists (output name in c1, input name in c2). An unbounded (or
    missing) guarantee is incompatible with any bounded assumption; a missing
    assumption is unconstrained and accepts anything.
    """
    worst = -np.inf
    location = None
    satisfied = True
    components = []
    for (out, inp) in pairs:
        assume = c2.assumptions.get(inp)
        if assume is None:
            components.append(-np.inf)
            continue
        guar = c1.guarantees.get(out)
        if guar is None:
            guar = Interval.of([-np.inf] * assume.dim, [np.inf] * assume.dim)
        if guar.dim != assume.dim:
            raise PortMismatch(
                f"guarantee dim {guar.dim} vs assumption dim {assume.dim} "
                f"on ({out!r}, {inp!r})")
        v = assume.violation_of(guar)
        components.append(v)
        if v > worst:
            worst = v
            location = ((out, inp), int(np.argmax(
                np.maximum(np.asarray(assume.lo) - np.asarray(guar.lo),
                           np.asarray(guar.hi) - np.asarray(assume.hi)))))
        if v > SAT_TOL:
            satisfied = False
    return ContractReport(kind="ag-compatibility", satisfied=satisfied,
                          worst=float(worst), location=location,
                          components=components, name="ag-compatibility")


def compose_ag(c1: AGContract, c2: Optional[AGContract], mode: str,
               pairs: Sequence = ()) -> AGContract:
    """Contract of the composed block.

    parallel: product boxes. serial: compatibility required; connected input
    boxes become internal and are dropped (projection realizes the
    existential quantification). feedback: serial rule applied to the closed
    pairs of a single contract.
    """
    if mode == "parallel":
        overlap = set(c1.assumptions) & set(c2.assumptions)
        if overlap:
            raise PortMismatch(f"parallel contracts share inputs {overlap}")
        return AGContract(
            assumptions={**c1.assumptions, **c2.assumptions},
            guarantees={**c1.guarantees, **c2.guarantees})
    if mode == "serial":
        report = check_ag_compatibility(c1, c2, pairs)
        if not report.satisfied:
            raise Incompatible(
                f"serial connection incompatible (worst={report.worst:.6g} "
                f"at {report.location})")
        connected = {inp for (_, inp) in pairs}
        return AGContract(
            assumptions={**c1.assumptions,
                         **{k: v for k, v in c2.assumptions.items()
                            if k not in connected}},
            guarantees={**c1.guarantees,
                        **{k: v for k, v in c2.guarantees.items()
                           if k not in connected}})
    if mode == "feedback":
        report = check_ag_compatibility(c1, c1, pairs)
        if not report.satisfied:
            raise Incompatible(
                f"feedback closure incompatible (worst={report.worst:.6g} "
                f"at {report.location})")
        fed = {inp for (_, inp) in pairs}
        return AGContract(
            assumptions={k: v for k, v in c1.assumptions.items()
                         if k not in fed},
            guarantees={k: v for k, v in c1.guarantees.items()
                        if k not in fed})
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# Residual contracts
# --------------------------------------------------------------------------

class SignalView:
    """Name-translating view over a signals dict (supports composition
    renaming without rewriting contract bodies)."""

    __slots__ = ("_data", "_tr")

    def __init__(self, data: dict, tr: Callable[[str], str] = lambda n: n):
        self._data = data
        self._tr = tr

    def __getitem__(self, name):
        return self._data[self._tr(name)]

    def __contains__(self, name):
        return self._tr(name) in self._data


@dataclass
class ContractContext:
    """Everything a residual map may read: trajectories, params, times."""

    signals: SignalView  # signal name -> list of Var per instant
    params: SignalView  # param name -> Var
    times: list
    tape: Tape


@dataclass(frozen=True)
class ResidualContract:
    """Differentiable certificate: satisfied iff fn(ctx) <= 0 elementwise."""

    name: str
    m: int
    fn: Callable  # (ContractContext) -> Var of shape (m,)
    per_step: Optional[Callable] = None  # (ctx) -> list of scalar Vars
    parameter_level: bool = False
    translate: Callable = staticmethod(lambda n: n)

    def rename(self, tr: Callable[[str], str]) -> "ResidualContract":
        old = self.translate
        return replace(self, translate=(lambda n, _old=old, _tr=tr: _tr(_old(n))))


def eval_residual(contract: ResidualContract, signals: dict, params: dict,
                  times, tape: Tape) -> tuple:
    """Evaluate a residual contract on realized trajectories.

    Returns (residual Var, ContractReport); the Var stays on the tape so the
    residual can be penalized/differentiated, the report is detached.
    """
    for name, vs in signals.items():
        if len(vs) != len(times):
            raise GridMismatch(
                f"signal {name!r} has {len(vs)} samples for {len(times)} "
                "instants")
    ctx = ContractContext(signals=SignalView(signals, contract.translate),
                          params=SignalView(params, contract.translate),
                          times=list(times), tape=tape)
    r = contract.fn(ctx)
    vals = np.atleast_1d(np.asarray(r.array, dtype=np.float64))
    worst_i = int(np.argmax(vals))
    per_step_vals = None
    location = (contract.name, worst_i)
    if contract.per_step is not None:
        steps = contract.per_step(ctx)
        per_step_vals = [float(np.max(s.array)) for s in steps]
        location = (contract.name, int(np.argmax(per_step_vals)))
    report = ContractReport(
        kind="residual", satisfied=bool(np.all(vals <= SAT_TOL)),
        worst=float(vals[worst_i]), location=location,
        components=vals.tolist(), per_step=per_step_vals,
        parameter_level=contract.parameter_level, name=contract.name)
    return r, report


def compose_residual(contracts: Sequence[ResidualContract], mode: str,
                     pairs: Sequence = ()) -> ResidualContract:
    """Stack residuals per the composition mode.

    parallel: concatenation. serial/feedback: concatenation after renaming
    connected inputs to the outputs that drive them (substitution of the
    connection into the downstream/fed-back contract).
    """
    if mode == "parallel":
        cs = list(contracts)
    elif mode == "serial":
        if len(contracts) != 2:
            raise ValueError("serial composes exactly two contracts")
        sub = {dst: src for (src, dst) in pairs}
        cs = [contracts[0], contracts[1].rename(lambda n: sub.get(n, n))]
    elif mode == "feedback":
        sub = {dst: src for (src, dst) in pairs}
        cs = [c.rename(lambda n: sub.get(n, n)) for c in contracts]
    else:
        raise ValueError(f"unknown mode {mode!r}")

    total_m = sum(c.m for c in contracts)

    def fn(ctx: ContractContext) -> Var:
        parts = []
        for c in cs:
            inner = ContractContext(
                signals=SignalView(ctx.signals._data,
                                   lambda n, _c=c: ctx.signals._tr(_c.translate(n))),
                params=SignalView(ctx.params._data,
                                  lambda n, _c=c: ctx.params._tr(_c.translate(n))),
                times=ctx.times, tape=ctx.tape)
            r = c.fn(inner)
            parts.append(r if len(r.shape) == 1 else r.reshape((r.array.size,)))
        return concat(parts, axis=0) if len(parts) > 1 else parts[0]

    return ResidualContract(
        name="+".join(c.name for c in contracts), m=total_m, fn=fn,
        parameter_level=all(c.parameter_level for c in cs))


# --------------------------------------------------------------------------
# Concrete residual contracts used by the studies
# --------------------------------------------------------------------------

def stability_margin_residual(eps: float, a_param: str = "plant.a",
                              b_param: str = "plant.b",
                              kappa_param: str = "ctl.kappa") -> ResidualContract:
    """|a - b*kappa| - (1 - eps) <= 0: exponential stability with margin for
    the scalar closed loop. Depends on parameters only (exact A-G case)."""
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")

    def fn(ctx: ContractContext) -> Var:
        a = ctx.params[a_param]
        b = ctx.params[b_param]
        kappa = ctx.params[kappa_param]
        r = abs(a - b * kappa) - (1.0 - eps)
        return r.reshape((1,))

    return ResidualContract(name="stability-margin", m=1, fn=fn,
                            parameter_level=True)


def lyapunov_decrease_residual(eps: float,
                               v_signal: str = "lyap.v") -> ResidualContract:
    """max_k (V(x_{k+1}) - V(x_k) + eps) <= 0 along the realized trajectory.

    Works on batched executions too: the max also ranges over the batch.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def deltas(ctx: ContractContext):
        vs = ctx.signals[v_signal]
        return [vs[k + 1] - vs[k] + eps for k in range(len(vs) - 1)]

    def fn(ctx: ContractContext) -> Var:
        ds = deltas(ctx)
        axis = len(ds[0].shape) - 1
        stacked = concat(ds, axis=axis)
        return max_reduce(stacked).reshape((1,))

    def per_step(ctx: ContractContext):
        return deltas(ctx)

    return ResidualContract(name="lyapunov-decrease", m=1, fn=fn,
                            per_step=per_step)


def spectral_radius_residual(margin: float = 1.0,
                             label: str = "koopman-stability") -> ResidualContract:
    """rho(K) < margin, enforced by construction; reported, not penalized.

    The residual is evaluated off-tape (eigensolver) and exposed as a
    parameter-level report value rho - margin.
    """

    def fn(ctx: ContractContext) -> Var:
        raise NotImplementedError(
            "spectral-radius contracts are verified off-tape; use "
            "nn.spectral_radius on the materialized operator")

    return ResidualContract(name=label, m=1, fn=fn, parameter_level=True)


CONTRACT_REGISTRY = {
    "stability-margin": lambda cfg: stability_margin_residual(
        eps=float(cfg.get("eps", 0.05)),
        a_param=cfg.get("a_param", "plant.a"),
        b_param=cfg.get("b_param", "plant.b"),
        kappa_param=cfg.get("kappa_param", "ctl.kappa")),
    "lyapunov-decrease": lambda cfg: lyapunov_decrease_residual(
        eps=float(cfg.get("eps", 1e-3)),
        v_signal=cfg.get("v_signal", "lyap.v")),
}


def make_residual_contract(kind: str, cfg: dict) -> ResidualContract:
    if kind not in CONTRACT_REGISTRY:
        raise KeyError(f"unknown residual contract {kind!r}")
    return CONTRACT_REGISTRY[kind](cfg)


def ag_box_from_json(cfg: dict) -> AGContract:
    """{"assumptions": {sig: [lo, hi]}, "guarantees": {...}} with per-dim
    lists or scalars; null means +-inf."""

    def box(v):
        lo, hi = v
        lo = [-np.inf if x is None else x for x in np.atleast_1d(lo).tolist()]
        hi = [np.inf if x is None else x for x in np.atleast_1d(hi).tolist()]
        return Interval.of(lo, hi)

    return AGContract(
        assumptions={k: box(v) for k, v in cfg.get("assumptions", {}).items()},
        guarantees={k: box(v) for k, v in cfg.get("guarantees", {}).items()})
