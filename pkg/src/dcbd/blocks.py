"""Blocks: ports, time semantics, transition/output maps, and execution.

A block owns input/state/output signals, a set of sampling periods (0 means
continuous time), one transition map per period, and an output map that is
either explicit or an implicit fixed-point relation. Executing a block over
[0, t_f] produces state and output trajectories on the block's time grid,
with the whole computation recorded on a tape so gradients reach the initial
state, the inputs, and the parameters.

Map signatures (all values are tape Vars keyed by signal name):

    transition(X, U, P, t) -> dict of next values for the states of its period
                              (for period 0: their time derivatives)
    output(X, U, P, t)     -> dict of output values

Time enters the maps so that source blocks can generate signals; ordinary
dynamics ignore it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (EmptyTimeBase, ImplicitSolveDiverged, MissingInput,
                     ShapeMismatch, SingularJacobian)
from .tape import Node, OpDef, Tape, Tensor, Var, as_tensor, backward
from .tape import register_op as _register_op

CONTINUOUS = Fraction(0)


def as_period(p) -> Fraction:
    f = Fraction(p)
    if f < 0:
        raise ValueError(f"negative period {p}")
    return f


@dataclass(frozen=True)
class SignalSpec:
    """A named signal: dimension plus time semantics.

    period == 0 means continuous-time; period > 0 means discrete-time with
    that sampling period (the signal is piecewise constant between samples).
    """

    name: str
    dim: int
    period: Fraction = CONTINUOUS

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"signal {self.name!r} needs positive dim")
        object.__setattr__(self, "period", as_period(self.period))

    @property
    def kind(self) -> str:
        return "continuous" if self.period == 0 else "discrete"


@dataclass(frozen=True)
class ImplicitOutput:
    """Output map of the form Y = phi(Y, X, U); solved by fixed point.

    `phi(y, X, U, P, t) -> Var` receives/returns the concatenation of all
    output signals as one vector.
    """

    phi: Callable
    tol: float = 1e-10
    max_iter: int = 500


class BlockDef:
    """A block: ports, time semantics, dynamics, contracts (immutable)."""

    __slots__ = ("name", "inputs", "states", "outputs", "periods",
                 "transitions", "output_map", "init", "params",
                 "feedthrough", "contracts", "step")

    def __init__(self, name: str, inputs: Sequence[SignalSpec],
                 states: Sequence[SignalSpec], outputs: Sequence[SignalSpec],
                 transitions: dict, output_map, init: dict, *,
                 params: Optional[dict] = None,
                 feedthrough: Optional[set] = None,
                 contracts: Sequence = (),
                 periods: Sequence = (),
                 step=None):
        self.name = name
        self.inputs = tuple(inputs)
        self.states = tuple(states)
        self.outputs = tuple(outputs)
        self.transitions = dict(transitions)
        self.output_map = output_map
        self.init = {k: as_tensor(v) for k, v in init.items()}
        self.params = {k: as_tensor(v) for k, v in (params or {}).items()}
        self.feedthrough = frozenset(feedthrough or ())
        self.contracts = tuple(contracts)
        self.step = as_period(step) if step is not None else None

        state_periods = {s.period for s in self.states}
        declared = {as_period(p) for p in periods}
        self.periods = frozenset(state_periods | declared) or frozenset({CONTINUOUS})
        self._validate()

    def _validate(self):
        if not self.inputs and not self.outputs:
            raise ValueError(f"block {self.name!r}: inputs and outputs both empty")
        names = [s.name for s in self.inputs + self.states + self.outputs]
        if len(set(names)) != len(names):
            raise ValueError(f"block {self.name!r}: duplicate signal names")
        for spec in self.states:
            if spec.name not in self.init:
                raise ValueError(
                    f"block {self.name!r}: missing init for state {spec.name!r}")
            got = self.init[spec.name].shape
            if got != (spec.dim,):
                raise ShapeMismatch(
                    f"block {self.name!r}: init for {spec.name!r} has shape "
                    f"{got}, expected ({spec.dim},)")
        state_periods = {s.period for s in self.states}
        for tau in state_periods:
            if tau not in self.transitions:
                raise ValueError(
                    f"block {self.name!r}: no transition for period {tau}")
        for tau in self.transitions:
            if tau not in state_periods:
                raise ValueError(
                    f"block {self.name!r}: transition for period {tau} "
                    "owns no states")
        in_names = {s.name for s in self.inputs}
        out_names = {s.name for s in self.outputs}
        for (u, y) in self.feedthrough:
            if u not in in_names or y not in out_names:
                raise ValueError(
                    f"block {self.name!r}: feedthrough pair ({u!r}, {y!r}) "
                    "references unknown ports")

    # Convenience views ----------------------------------------------------

    @property
    def is_source(self) -> bool:
        return not self.inputs

    @property
    def is_static(self) -> bool:
        return not self.states

    def state_partition(self) -> dict:
        """Period -> tuple of state names (a partition of the states)."""
        part: dict = {}
        for s in self.states:
            part.setdefault(s.period, []).append(s.name)
        return {k: tuple(v) for k, v in part.items()}

    def input_spec(self, name: str) -> SignalSpec:
        for s in self.inputs:
            if s.name == name:
                return s
        raise KeyError(name)

    def output_spec(self, name: str) -> SignalSpec:
        for s in self.outputs:
            if s.name == name:
                return s
        raise KeyError(name)

    def replace(self, **kwargs) -> "BlockDef":
        """Copy with selected fields replaced (e.g. new init or params)."""
        base = dict(
            name=self.name, inputs=self.inputs, states=self.states,
            outputs=self.outputs, transitions=self.transitions,
            output_map=self.output_map, init=self.init, params=self.params,
            feedthrough=self.feedthrough, contracts=self.contracts,
            periods=self.periods, step=self.step)
        base.update(kwargs)
        return BlockDef(
            base["name"], base["inputs"], base["states"], base["outputs"],
            base["transitions"], base["output_map"], base["init"],
            params=base["params"], feedthrough=base["feedthrough"],
            contracts=base["contracts"], periods=base["periods"],
            step=base["step"])

    def __repr__(self):
        return (f"BlockDef({self.name!r}, in={[s.name for s in self.inputs]}, "
                f"x={[s.name for s in self.states]}, "
                f"out={[s.name for s in self.outputs]})")


# --------------------------------------------------------------------------
# Time grids
# --------------------------------------------------------------------------

def time_grid(periods, t_f, step=None) -> list:
    """Sorted union of sample instants k*tau <= t_f plus {0, t_f}.

    Periods are exact rationals so grid membership is exact. A positive
    `step` contributes its own multiples (used for continuous integration).
    """
    t_f = Fraction(t_f)
    if t_f <= 0:
        raise ValueError("t_f must be positive")
    pos = [as_period(p) for p in periods if as_period(p) > 0]
    if step is not None and as_period(step) > 0:
        pos.append(as_period(step))
    if not pos:
        raise EmptyTimeBase(
            "no positive sampling period and no declared integration step")
    points = {Fraction(0), t_f}
    for tau in pos:
        k = 1
        while k * tau <= t_f:
            points.add(k * tau)
            k += 1
    return sorted(points)


@dataclass
class Trajectory:
    """Signal values on a time grid (detached from any tape)."""

    times: list
    values: dict  # signal name -> list of Tensor, aligned with times
    specs: dict = field(default_factory=dict)  # signal name -> SignalSpec

    def array(self, name: str) -> np.ndarray:
        return np.stack([v.data for v in self.values[name]])

    def at(self, name: str, i: int) -> Tensor:
        return self.values[name][i]


# --------------------------------------------------------------------------
# Fixed-point output maps
# --------------------------------------------------------------------------

def _fp_forbidden(*a, **k):
    raise RuntimeError("fixed_point nodes are appended by fixed_point_solve")


def _fp_backward(arrays, value, saved, attrs, g):
    a_mat, input_jacs, in_shapes = saved
    try:
        lam = np.linalg.solve(a_mat.T, np.asarray(g, dtype=np.float64).ravel())
    except np.linalg.LinAlgError as e:
        raise SingularJacobian(f"(I - dPhi/dY) is singular: {e}") from None
    return tuple(
        (lam @ jac).reshape(shape)
        for jac, shape in zip(input_jacs, in_shapes))


def _fp_jvp(arrays, value, saved, attrs, tans):
    a_mat, input_jacs, in_shapes = saved
    rhs = np.zeros(a_mat.shape[0])
    for jac, t in zip(input_jacs, tans):
        if t is not None:
            rhs += jac @ np.asarray(t, dtype=np.float64).ravel()
    try:
        delta = np.linalg.solve(a_mat, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularJacobian(f"(I - dPhi/dY) is singular: {e}") from None
    return delta.reshape(value.shape)


_register_op("fixed_point", OpDef(_fp_forbidden, _fp_backward, _fp_jvp))


def fixed_point_solve(tape: Tape, phi, inputs: Sequence[Var], y0,
                      tol: float = 1e-10, max_iter: int = 500) -> Var:
    """Solve Y = phi(Y, inputs...) by Picard iteration; differentiable.

    The backward pass uses the implicit relation (I - dPhi/dY) dY = dPhi/dU dU
    via a dense linear solve at the converged point rather than by
    differentiating the iteration. `phi(y, *inputs) -> Var` must record on
    the tape of its arguments.
    """
    y = as_tensor(y0).data

    def phi_value(y_arr):
        scratch = Tape()
        y_leaf = scratch.leaf(y_arr)
        in_leaves = [scratch.leaf(v.array) for v in inputs]
        return phi(y_leaf, *in_leaves).array

    converged = False
    for _ in range(max_iter):
        y_next = phi_value(y)
        if np.max(np.abs(y_next - y)) <= tol:
            y = y_next
            converged = True
            break
        y = y_next
    if not converged:
        raise ImplicitSolveDiverged(
            f"fixed point not reached in {max_iter} iterations (tol={tol})")

    # Jacobians of phi at the solution, one reverse sweep per output entry.
    scratch = Tape()
    y_leaf = scratch.leaf(y)
    in_leaves = [scratch.leaf(v.array) for v in inputs]
    out = phi(y_leaf, *in_leaves)
    m = out.array.size
    flat = out.reshape((m,))
    jac_y = np.zeros((m, m))
    input_jacs = [np.zeros((m, v.array.size)) for v in inputs]
    for j in range(m):
        comp = flat.slice(0, j, j + 1).sum()
        store = backward(scratch, comp)
        jac_y[j, :] = store.array(y_leaf).ravel()
        for jac, leaf in zip(input_jacs, in_leaves):
            jac[j, :] = store.array(leaf).ravel()
    a_mat = np.eye(m) - jac_y

    in_shapes = [v.shape for v in inputs]
    saved = (a_mat, input_jacs, in_shapes)
    value = np.asarray(y, dtype=np.float64).reshape(out.shape)
    tape.nodes.append(Node("fixed_point", tuple(v.nid for v in inputs),
                           value, None, saved))
    return Var(tape, len(tape.nodes) - 1)


# --------------------------------------------------------------------------
# Execution
# --------------------------------------------------------------------------

def _memo(tape: Tape, key, fn):
    """Per-tape memo for composed maps (pure w.r.t. one execution)."""
    hit = tape.scratch.get(key)
    if hit is None:
        hit = fn()
        tape.scratch[key] = hit
    return hit


def output_eval(block: BlockDef, X: dict, U: dict, P: dict, t, tape: Tape) -> dict:
    """Evaluate the output map at one instant (explicit or fixed-point)."""
    g = block.output_map
    if isinstance(g, ImplicitOutput):
        dims = [s.dim for s in block.outputs]
        y0 = np.zeros(sum(dims))
        x_names = sorted(X)
        u_names = sorted(U)
        p_names = sorted(P)
        deps = ([X[n] for n in x_names] + [U[n] for n in u_names]
                + [P[n] for n in p_names])

        def phi_vec(y, *ins):
            nx, nu = len(x_names), len(u_names)
            x2 = dict(zip(x_names, ins[:nx]))
            u2 = dict(zip(u_names, ins[nx:nx + nu]))
            p2 = dict(zip(p_names, ins[nx + nu:]))
            return g.phi(y, x2, u2, p2, t)

        y = fixed_point_solve(tape, phi_vec, deps, y0, tol=g.tol,
                              max_iter=g.max_iter)
        out, ofs = {}, 0
        for spec in block.outputs:
            out[spec.name] = y.slice(0, ofs, ofs + spec.dim)
            ofs += spec.dim
        return out
    return g(X, U, P, t)


def _rk4_advance(block: BlockDef, cont: tuple, X: dict, U: dict, P: dict,
                 t, h: Fraction) -> dict:
    """One RK4 step of the block's continuous states over [t, t+h], ZOH inputs."""
    f0 = block.transitions[CONTINUOUS]
    hf = float(h)

    def shifted(base, ks, c):
        x2 = dict(base)
        for name in cont:
            x2[name] = base[name] + ks[name] * (hf * c)
        return x2

    k1 = f0(X, U, P, t)
    k2 = f0(shifted(X, k1, 0.5), U, P, t)
    k3 = f0(shifted(X, k2, 0.5), U, P, t)
    k4 = f0(shifted(X, k3, 1.0), U, P, t)
    out = {}
    for name in cont:
        incr = k1[name] + (k2[name] * 2.0) + (k3[name] * 2.0) + k4[name]
        out[name] = X[name] + incr * (hf / 6.0)
    return out


@dataclass
class ExecResult:
    """Trajectories of one execution, still attached to the tape."""

    block: BlockDef
    tape: Tape
    times: list
    states: dict  # name -> list of Var
    outputs: dict  # name -> list of Var
    inputs: dict  # name -> list of Var (leaves)
    init_vars: dict  # state name -> Var
    param_vars: dict  # param name -> Var

    def output_trajectory(self) -> Trajectory:
        return Trajectory(
            times=list(self.times),
            values={k: [v.value for v in vs] for k, vs in self.outputs.items()},
            specs={s.name: s for s in self.block.outputs})

    def state_trajectory(self) -> Trajectory:
        return Trajectory(
            times=list(self.times),
            values={k: [v.value for v in vs] for k, vs in self.states.items()},
            specs={s.name: s for s in self.block.states})

    def input_trajectory(self) -> Trajectory:
        return Trajectory(
            times=list(self.times),
            values={k: [v.value for v in vs] for k, vs in self.inputs.items()},
            specs={s.name: s for s in self.block.inputs})


def _input_provider(spec: SignalSpec, provider):
    if callable(provider):
        return provider
    arr = as_tensor(provider).data
    return lambda t: arr


def execute_block(block: BlockDef, inputs: Optional[dict], t_f, *,
                  tape: Optional[Tape] = None, init: Optional[dict] = None,
                  params: Optional[dict] = None, grid=None) -> ExecResult:
    """Execute a block over [0, t_f] on its time grid.

    `inputs` maps input-signal names to either a constant value or a callable
    of the time instant. Initial states and parameters may be overridden per
    execution; both enter the tape as leaves so that gradients of any scalar
    functional of the trajectories reach them.
    """
    tape = tape if tape is not None else Tape()
    inputs = inputs or {}
    if grid is None:
        grid = time_grid(block.periods, t_f, step=block.step)
    else:
        grid = list(grid)

    providers = {}
    for spec in block.inputs:
        if spec.name not in inputs:
            raise MissingInput(
                f"block {block.name!r}: input {spec.name!r} not provided")
        providers[spec.name] = _input_provider(spec, inputs[spec.name])

    param_vars = {}
    for pname, pval in block.params.items():
        override = params.get(pname) if params else None
        param_vars[pname] = tape.leaf(
            override if override is not None else pval,
            name=f"{block.name}.{pname}")

    init_vars = {}
    for spec in block.states:
        override = init.get(spec.name) if init else None
        init_vars[spec.name] = tape.leaf(
            override if override is not None else block.init[spec.name],
            name=f"{block.name}.init.{spec.name}")

    partition = block.state_partition()
    cont = partition.get(CONTINUOUS, ())
    discrete_periods = sorted(tau for tau in partition if tau > 0)
    index_of = {t: i for i, t in enumerate(grid)}

    states = {s.name: [] for s in block.states}
    outputs = {s.name: [] for s in block.outputs}
    in_traj = {s.name: [] for s in block.inputs}

    def inputs_at(t):
        vals = {}
        for name, fn in providers.items():
            vals[name] = tape.leaf(fn(t), name=f"{block.name}.{name}@{t}")
        return vals

    def state_at(i):
        return {name: states[name][i] for name in states}

    def record_instant(X, U, t):
        for name, v in X.items():
            states[name].append(v)
        for name, v in U.items():
            in_traj[name].append(v)
        Y = output_eval(block, X, U, param_vars, t, tape)
        for spec in block.outputs:
            if spec.name not in Y:
                raise ShapeMismatch(
                    f"block {block.name!r}: output map missing {spec.name!r}")
            outputs[spec.name].append(Y[spec.name])

    U0 = inputs_at(grid[0])
    record_instant(dict(init_vars), U0, grid[0])

    for i in range(len(grid) - 1):
        t, t1 = grid[i], grid[i + 1]
        X_t = state_at(i)
        U_t = {name: in_traj[name][i] for name in in_traj}
        X_next = {}
        if cont:
            X_next.update(_rk4_advance(block, cont, X_t, U_t,
                                       param_vars, t, t1 - t))
        for tau in discrete_periods:
            if t1 % tau == 0:
                t_prev = t1 - tau
                j = index_of[t_prev]
                Xp = state_at(j)
                Up = {name: in_traj[name][j] for name in in_traj}
                upd = block.transitions[tau](Xp, Up, param_vars, t_prev)
                for name in partition[tau]:
                    X_next[name] = upd[name]
            else:
                for name in partition[tau]:
                    X_next[name] = X_t[name]  # hold between samples
        U1 = inputs_at(t1)
        record_instant(X_next, U1, t1)

    return ExecResult(block=block, tape=tape, times=list(grid), states=states,
                      outputs=outputs, inputs=in_traj, init_vars=init_vars,
                      param_vars=param_vars)
