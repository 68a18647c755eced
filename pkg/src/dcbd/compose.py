"""Connections, diagrams, the three composition operators, algebraic-loop
detection, flattening, and compilation to a per-horizon execution schedule.

Flattening reduces any loop-free diagram to a single BlockDef with identical
execution semantics: all blocks are renamed with hierarchical prefixes,
folded into one parallel composite, and the internal connections are closed
with one feedback composition. The direct interpreter (`interpret`) steps
the diagram connection-by-connection on the union time grid and serves as
the reference oracle for that reduction.

Signals fed back across rates are piecewise constant, so a consumer simply
reads the most recent producer value at its own instants (zero-order hold).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .blocks import (CONTINUOUS, BlockDef, ExecResult, SignalSpec, Trajectory,
                     execute_block, output_eval, time_grid)
from .errors import (AlgebraicLoop, DimMismatch, EmptyTimeBase,
                     InputAlreadyDriven, InvalidConnection, KindMismatch,
                     MissingInput)
from .tape import Tape, Var


def _check_port_compat(src: SignalSpec, dst: SignalSpec) -> None:
    if src.dim != dst.dim:
        raise DimMismatch(
            f"cannot connect {src.name!r} (dim {src.dim}) to {dst.name!r} "
            f"(dim {dst.dim})")
    if src.period > 0 and dst.period > 0:
        a, b = src.period, dst.period
        if a % b != 0 and b % a != 0:
            raise KindMismatch(
                f"incommensurate discrete rates {a} -> {b} between "
                f"{src.name!r} and {dst.name!r}")


def _prefix_spec(spec: SignalSpec, prefix: str) -> SignalSpec:
    return SignalSpec(f"{prefix}.{spec.name}", spec.dim, spec.period)


def rename_block(block: BlockDef, prefix: str) -> BlockDef:
    """Prefix every signal and parameter name with `prefix.`; semantics kept."""

    def strip(d: dict, names) -> dict:
        return {n: d[f"{prefix}.{n}"] for n in names}

    in_names = [s.name for s in block.inputs]
    st_names = [s.name for s in block.states]
    par_names = list(block.params)

    def wrap_transition(f):
        def wrapped(X, U, P, t):
            local = f(strip(X, st_names), strip(U, in_names),
                      strip(P, par_names), t)
            return {f"{prefix}.{k}": v for k, v in local.items()}
        return wrapped

    g = block.output_map

    def wrapped_output(X, U, P, t):
        local = g(strip(X, st_names), strip(U, in_names),
                  strip(P, par_names), t)
        return {f"{prefix}.{k}": v for k, v in local.items()}

    contracts = tuple(
        c.rename(lambda n: f"{prefix}.{n}") if hasattr(c, "rename") else c
        for c in block.contracts)

    return BlockDef(
        f"{prefix}", [_prefix_spec(s, prefix) for s in block.inputs],
        [_prefix_spec(s, prefix) for s in block.states],
        [_prefix_spec(s, prefix) for s in block.outputs],
        {tau: wrap_transition(f) for tau, f in block.transitions.items()},
        wrapped_output,
        {f"{prefix}.{k}": v for k, v in block.init.items()},
        params={f"{prefix}.{k}": v for k, v in block.params.items()},
        feedthrough={(f"{prefix}.{u}", f"{prefix}.{y}")
                     for (u, y) in block.feedthrough},
        contracts=contracts, periods=block.periods, step=block.step)


# --------------------------------------------------------------------------
# Diagrams
# --------------------------------------------------------------------------

@dataclass
class Diagram:
    """Named blocks plus unilateral connections ("block.signal" port paths)."""

    blocks: dict = field(default_factory=dict)
    connections: list = field(default_factory=list)  # [(src_path, dst_path)]

    def add_block(self, name: str, block: BlockDef) -> "Diagram":
        if name in self.blocks:
            raise ValueError(f"duplicate block name {name!r}")
        if "." in name:
            raise ValueError(f"block name {name!r} may not contain '.'")
        self.blocks[name] = block
        return self

    def _resolve(self, path: str, want: str):
        try:
            blk, sig = path.split(".", 1)
        except ValueError:
            raise InvalidConnection(f"port path {path!r} is not block.signal")
        if blk not in self.blocks:
            raise InvalidConnection(f"unknown block {blk!r} in {path!r}")
        block = self.blocks[blk]
        specs = block.outputs if want == "out" else block.inputs
        for s in specs:
            if s.name == sig:
                return blk, s
        raise InvalidConnection(f"block {blk!r} has no {want}put {sig!r}")

    def connect(self, src: str, dst: str) -> "Diagram":
        """Add a unilateral connection; an output may fan out, but only one
        output can drive any given input."""
        _, src_spec = self._resolve(src, "out")
        _, dst_spec = self._resolve(dst, "in")
        _check_port_compat(src_spec, dst_spec)
        for (_, existing_dst) in self.connections:
            if existing_dst == dst:
                raise InputAlreadyDriven(f"input {dst!r} already driven")
        self.connections.append((src, dst))
        return self

    def driven_inputs(self) -> set:
        return {dst for (_, dst) in self.connections}

    def external_inputs(self) -> list:
        driven = self.driven_inputs()
        out = []
        for name, b in self.blocks.items():
            for s in b.inputs:
                if f"{name}.{s.name}" not in driven:
                    out.append((name, s))
        return out

    def external_outputs(self) -> list:
        return [(name, s) for name, b in self.blocks.items()
                for s in b.outputs]

    def periods(self) -> set:
        out = set()
        for b in self.blocks.values():
            out |= set(b.periods)
        return out

    def steps(self) -> set:
        return {b.step for b in self.blocks.values() if b.step is not None}


# --------------------------------------------------------------------------
# Algebraic-loop detection (port graph over feedthrough + connections)
# --------------------------------------------------------------------------

def _port_graph(diagram: Diagram) -> dict:
    """Adjacency over ports ('in'|'out', 'block.signal')."""
    adj: dict = {}

    def node(kind, path):
        return adj.setdefault((kind, path), [])

    for name, b in diagram.blocks.items():
        for s in b.inputs:
            node("in", f"{name}.{s.name}")
        for s in b.outputs:
            node("out", f"{name}.{s.name}")
        for (u, y) in b.feedthrough:
            node("in", f"{name}.{u}").append(("out", f"{name}.{y}"))
    for (src, dst) in diagram.connections:
        node("out", src).append(("in", dst))
    return adj


def _strongly_connected(adj: dict) -> list:
    """Tarjan SCCs, iterative; deterministic for a fixed insertion order."""
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    sccs: list = []
    counter = [0]

    for root in adj:
        if root in index:
            continue
        work = [(root, iter(adj[root]))]
        index[root] = low[root] = counter[0]
        counter[0] += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(adj[w])))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(comp)
    return sccs


def detect_algebraic_loops(diagram: Diagram) -> list:
    """Cycles of direct feedthroughs closed through connections.

    Returns one representative cycle (list of port paths) per strongly
    connected component; empty list iff the diagram is loop-free.
    """
    adj = _port_graph(diagram)
    cycles = []
    for comp in _strongly_connected(adj):
        if len(comp) < 2:
            continue
        members = set(comp)
        # walk within the component to produce a readable cycle
        start = comp[0]
        cycle = [start]
        cur = start
        seen = {start}
        while True:
            nxt = next(w for w in adj[cur] if w in members)
            if nxt == start or nxt in seen:
                break
            cycle.append(nxt)
            seen.add(nxt)
            cur = nxt
        cycles.append([f"{k}:{p}" for (k, p) in cycle])
    return cycles


# --------------------------------------------------------------------------
# Composition operators
# --------------------------------------------------------------------------

def _disjoint_or_prefixed(b1: BlockDef, b2: BlockDef):
    names1 = {s.name for s in b1.inputs + b1.states + b1.outputs} | set(b1.params)
    names2 = {s.name for s in b2.inputs + b2.states + b2.outputs} | set(b2.params)
    if names1 & names2:
        return rename_block(b1, b1.name), rename_block(b2, b2.name), True
    return b1, b2, False


def _restrict(d: dict, names) -> dict:
    return {n: d[n] for n in names}


def parallel(b1: BlockDef, b2: BlockDef, name: Optional[str] = None) -> BlockDef:
    """Side-by-side union of two blocks (ports auto-prefixed on collision)."""
    b1, b2, _ = _disjoint_or_prefixed(b1, b2)
    in1 = [s.name for s in b1.inputs]
    in2 = [s.name for s in b2.inputs]
    st1 = [s.name for s in b1.states]
    st2 = [s.name for s in b2.states]
    p1 = list(b1.params)
    p2 = list(b2.params)

    def make_transition(tau):
        f1 = b1.transitions.get(tau)
        f2 = b2.transitions.get(tau)

        def f(X, U, P, t):
            out = {}
            if f1 is not None:
                out.update(f1(_restrict(X, st1), _restrict(U, in1),
                              _restrict(P, p1), t))
            if f2 is not None:
                out.update(f2(_restrict(X, st2), _restrict(U, in2),
                              _restrict(P, p2), t))
            return out
        return f

    def g(X, U, P, t):
        out = dict(b1.output_map(_restrict(X, st1), _restrict(U, in1),
                                 _restrict(P, p1), t))
        out.update(b2.output_map(_restrict(X, st2), _restrict(U, in2),
                                 _restrict(P, p2), t))
        return out

    taus = set(b1.transitions) | set(b2.transitions)
    step = b1.step if b2.step is None else (
        b2.step if b1.step is None else min(b1.step, b2.step))
    return BlockDef(
        name or f"({b1.name}||{b2.name})",
        list(b1.inputs) + list(b2.inputs),
        list(b1.states) + list(b2.states),
        list(b1.outputs) + list(b2.outputs),
        {tau: make_transition(tau) for tau in taus}, g,
        {**b1.init, **b2.init}, params={**b1.params, **b2.params},
        feedthrough=set(b1.feedthrough) | set(b2.feedthrough),
        contracts=b1.contracts + b2.contracts,
        periods=set(b1.periods) | set(b2.periods), step=step)


def _memo_eval(tape: Tape, key, fn):
    hit = tape.scratch.get(key)
    if hit is None:
        hit = fn()
        tape.scratch[key] = hit
    return hit


def serial(b1: BlockDef, b2: BlockDef, pairs: Sequence,
           name: Optional[str] = None) -> BlockDef:
    """Connect outputs of b1 to inputs of b2; the composed block exposes
    b1's inputs plus b2's unconnected inputs."""
    b1r, b2r, prefixed = _disjoint_or_prefixed(b1, b2)
    if prefixed:
        pairs = [(f"{b1.name}.{a}", f"{b2.name}.{c}") for (a, c) in pairs]
    out1 = {s.name: s for s in b1r.outputs}
    in2 = {s.name: s for s in b2r.inputs}
    seen_dst = set()
    for (src, dst) in pairs:
        if src not in out1 or dst not in in2:
            raise InvalidConnection(f"serial pair ({src!r}, {dst!r}) unknown")
        if dst in seen_dst:
            raise InputAlreadyDriven(f"serial input {dst!r} driven twice")
        seen_dst.add(dst)
        _check_port_compat(out1[src], in2[dst])

    in1_names = [s.name for s in b1r.inputs]
    st1 = [s.name for s in b1r.states]
    st2 = [s.name for s in b2r.states]
    p1 = list(b1r.params)
    p2 = list(b2r.params)
    sub = dict((dst, src) for (src, dst) in pairs)
    ext_in2 = [s.name for s in b2r.inputs if s.name not in sub]
    token = object()

    def y1_at(X, U, P, t):
        def build():
            return b1r.output_map(_restrict(X, st1), _restrict(U, in1_names),
                                  _restrict(P, p1), t)
        tape = _find_tape(X, U, P)
        return _memo_eval(tape, (id(token), id(P), t), build)

    def u2_full(X, U, P, t):
        y1 = y1_at(X, U, P, t)
        vals = {n: U[n] for n in ext_in2}
        for dst, src in sub.items():
            vals[dst] = y1[src]
        return vals

    def make_transition(tau):
        f1 = b1r.transitions.get(tau)
        f2 = b2r.transitions.get(tau)

        def f(X, U, P, t):
            out = {}
            if f1 is not None:
                out.update(f1(_restrict(X, st1), _restrict(U, in1_names),
                              _restrict(P, p1), t))
            if f2 is not None:
                out.update(f2(_restrict(X, st2), u2_full(X, U, P, t),
                              _restrict(P, p2), t))
            return out
        return f

    def g(X, U, P, t):
        out = dict(y1_at(X, U, P, t))
        out.update(b2r.output_map(_restrict(X, st2), u2_full(X, U, P, t),
                                  _restrict(P, p2), t))
        return out

    # composed feedthrough: b1 native, b2 native on unconnected inputs, and
    # chained paths through the connection
    ft = set(b1r.feedthrough)
    for (u, y) in b2r.feedthrough:
        if u not in sub:
            ft.add((u, y))
    for (u1, y1) in b1r.feedthrough:
        for (src, dst) in pairs:
            if y1 == src:
                for (u2, y2) in b2r.feedthrough:
                    if u2 == dst:
                        ft.add((u1, y2))

    contracts2 = tuple(
        c.rename(lambda n: sub.get(n, n)) if hasattr(c, "rename") else c
        for c in b2r.contracts)
    taus = set(b1r.transitions) | set(b2r.transitions)
    step = b1r.step if b2r.step is None else (
        b2r.step if b1r.step is None else min(b1r.step, b2r.step))
    return BlockDef(
        name or f"({b1r.name};{b2r.name})",
        list(b1r.inputs) + [s for s in b2r.inputs if s.name not in sub],
        list(b1r.states) + list(b2r.states),
        list(b1r.outputs) + list(b2r.outputs),
        {tau: make_transition(tau) for tau in taus}, g,
        {**b1r.init, **b2r.init}, params={**b1r.params, **b2r.params},
        feedthrough=ft, contracts=b1r.contracts + contracts2,
        periods=set(b1r.periods) | set(b2r.periods), step=step)


def _find_tape(*dicts) -> Tape:
    for d in dicts:
        for v in d.values():
            if isinstance(v, Var):
                return v.tape
    raise RuntimeError("no tape found among map arguments")


def _feedback_pair_order(block: BlockDef, pairs) -> list:
    """Order fed-back pairs so each pair's output depends (by feedthrough)
    only on inputs fed by earlier pairs; raises AlgebraicLoop on a cycle."""
    ft = block.feedthrough
    deps = {i: set() for i in range(len(pairs))}
    for i, (out_i, _) in enumerate(pairs):
        for j, (_, in_j) in enumerate(pairs):
            if (in_j, out_i) in ft:
                deps[i].add(j)
    order, ready = [], [i for i in sorted(deps) if not deps[i]]
    placed = set()
    while ready:
        i = ready.pop(0)
        order.append(i)
        placed.add(i)
        for k in sorted(deps):
            if k not in placed and k not in ready and deps[k] <= placed:
                ready.append(k)
    if len(order) != len(pairs):
        cyc = [f"{pairs[i][0]}->{pairs[i][1]}" for i in sorted(deps)
               if i not in placed]
        raise AlgebraicLoop([cyc])
    return order


def _zeros_like_port(tape: Tape, spec: SignalSpec, context_vals) -> Var:
    batch = None
    for v in context_vals:
        if isinstance(v, Var) and len(v.shape) == 2:
            batch = v.shape[0]
            break
    shape = (batch, spec.dim) if batch else (spec.dim,)
    return tape.leaf(np.zeros(shape))


def feedback(block: BlockDef, pairs: Sequence,
             name: Optional[str] = None) -> BlockDef:
    """Close (output -> input) connections of a block onto itself.

    Requires the closure to be algebraic-loop-free: each fed-back output is
    then computable before its value is substituted into the fed inputs, in
    a dependency order established from the feedthrough mask.
    """
    outs = {s.name: s for s in block.outputs}
    ins = {s.name: s for s in block.inputs}
    seen_dst = set()
    for (src, dst) in pairs:
        if src not in outs or dst not in ins:
            raise InvalidConnection(f"feedback pair ({src!r}, {dst!r}) unknown")
        if dst in seen_dst:
            raise InputAlreadyDriven(f"feedback input {dst!r} driven twice")
        seen_dst.add(dst)
        _check_port_compat(outs[src], ins[dst])
    pairs = list(pairs)
    order = _feedback_pair_order(block, pairs)

    fed = {dst for (_, dst) in pairs}
    ext_names = [s.name for s in block.inputs if s.name not in fed]
    token = object()

    def resolve(X, U_minus, P, t):
        tape = _find_tape(X, U_minus, P)

        def build():
            vals = dict(U_minus)
            context = list(X.values()) + list(U_minus.values())
            for (src, dst) in pairs:
                vals[dst] = _zeros_like_port(tape, ins[dst], context)
            for idx in order:
                src, dst = pairs[idx]
                y = block.output_map(X, vals, P, t)
                vals[dst] = y[src]
            return vals
        return _memo_eval(tape, (id(token), id(P), t), build)

    def make_transition(tau):
        f = block.transitions[tau]

        def wrapped(X, U, P, t):
            return f(X, resolve(X, _restrict(U, ext_names), P, t), P, t)
        return wrapped

    def g(X, U, P, t):
        return block.output_map(X, resolve(X, _restrict(U, ext_names), P, t),
                                P, t)

    # external feedthrough: reachability through the closed pairs
    adj: dict = {}
    for (u, y) in block.feedthrough:
        adj.setdefault(("in", u), []).append(("out", y))
    for (src, dst) in pairs:
        adj.setdefault(("out", src), []).append(("in", dst))
    ft = set()
    for u in ext_names:
        seen, frontier = set(), [("in", u)]
        while frontier:
            nd = frontier.pop()
            if nd in seen:
                continue
            seen.add(nd)
            frontier.extend(adj.get(nd, []))
        for (kind, y) in seen:
            if kind == "out":
                ft.add((u, y))

    contracts = tuple(
        c.rename(lambda n: dict(
            (d, s) for (s, d) in pairs).get(n, n)) if hasattr(c, "rename")
        else c for c in block.contracts)
    return BlockDef(
        name or f"fb({block.name})",
        [s for s in block.inputs if s.name not in fed],
        list(block.states), list(block.outputs),
        {tau: make_transition(tau) for tau in block.transitions}, g,
        dict(block.init), params=dict(block.params), feedthrough=ft,
        contracts=contracts, periods=block.periods, step=block.step)


def flatten(diagram: Diagram, name: str = "flat") -> BlockDef:
    """Reduce a loop-free diagram to one equivalent block.

    All blocks are renamed with their diagram keys, folded by parallel
    composition, and the internal connections are closed by one feedback
    composition; external ports keep their 'block.signal' names.
    """
    cycles = detect_algebraic_loops(diagram)
    if cycles:
        raise AlgebraicLoop(cycles)
    if not diagram.blocks:
        raise ValueError("empty diagram")
    renamed = [rename_block(b, key) for key, b in diagram.blocks.items()]
    composite = renamed[0]
    for nxt in renamed[1:]:
        composite = parallel(composite, nxt)
    if diagram.connections:
        composite = feedback(composite, list(diagram.connections), name=name)
    return composite.replace(name=name)


# --------------------------------------------------------------------------
# Scheduling and the reference interpreter
# --------------------------------------------------------------------------

def hyperperiod(periods) -> Fraction:
    """Least common multiple of positive rational periods."""
    fracs = [Fraction(p) for p in periods]
    if not fracs or any(p <= 0 for p in fracs):
        raise ValueError("hyperperiod needs positive periods")
    num = 1
    den = 0
    for p in fracs:
        num = num * p.numerator // math.gcd(num, p.numerator)
        den = math.gcd(den, p.denominator)
    return Fraction(num, den)


def _output_eval_order(diagram: Diagram) -> list:
    """Block evaluation steps per instant: [(block name, (output names,))].

    Kahn topological sort of output ports over feedthrough + connections,
    with consecutive same-block ports merged into one evaluation step.
    """
    producers = {}  # input path -> source path
    for (src, dst) in diagram.connections:
        producers[dst] = src

    # dependencies between output ports
    deps: dict = {}
    for name, b in diagram.blocks.items():
        for s in b.outputs:
            deps[f"{name}.{s.name}"] = set()
        for (u, y) in b.feedthrough:
            src = producers.get(f"{name}.{u}")
            if src is not None:
                deps[f"{name}.{y}"].add(src)

    order = []
    placed: set = set()
    remaining = dict(deps)
    while remaining:
        ready = [p for p in remaining if remaining[p] <= placed]
        if not ready:
            raise AlgebraicLoop([sorted(remaining)])
        for p in ready:
            order.append(p)
            placed.add(p)
            del remaining[p]

    # merge consecutive ports of one block into a single g evaluation, but
    # only while the merged ports depend on nothing published by that very
    # step (a self-connection may force two evaluations of the same block)
    steps: list = []
    before_last_step: set = set()
    published: set = set()
    for path in order:
        blk, sig = path.split(".", 1)
        if steps and steps[-1][0] == blk and deps[path] <= before_last_step:
            steps[-1] = (blk, steps[-1][1] + (sig,))
        else:
            before_last_step = set(published)
            steps.append((blk, (sig,)))
        published.add(path)
    return steps


@dataclass
class ExecutionGraph:
    """Topologically sorted per-instant evaluation plan over a horizon."""

    grid: list
    hyper: Optional[Fraction]
    output_steps: list  # [(block, (outputs,))] applied at every instant
    transition_fires: dict  # block -> sorted positive periods

    def dump(self) -> str:
        lines = [f"hyperperiod: {self.hyper}", f"instants: {len(self.grid)}"]
        for i, t in enumerate(self.grid):
            lines.append(f"t={t}")
            for blk, outs in self.output_steps:
                lines.append(f"  eval {blk} -> {', '.join(outs)}")
            if i + 1 < len(self.grid):
                t1 = self.grid[i + 1]
                for blk, taus in self.transition_fires.items():
                    for tau in taus:
                        if tau == 0:
                            lines.append(f"  integrate {blk} over ({t}, {t1}]")
                        elif t1 % tau == 0:
                            lines.append(f"  update {blk} (period {tau}) @ {t1}")
        return "\n".join(lines)


def compile_schedule(diagram, t_f) -> ExecutionGraph:
    """Rate-lift to the union grid and order per-instant evaluations."""
    if isinstance(diagram, BlockDef):
        d = Diagram()
        d.add_block(diagram.name or "block", diagram)
        diagram = d
    cycles = detect_algebraic_loops(diagram)
    if cycles:
        raise AlgebraicLoop(cycles)
    periods = diagram.periods()
    pos = [p for p in periods if p > 0]
    steps = diagram.steps()
    grid = time_grid(periods, t_f, step=min(steps) if steps else None)
    hyper = hyperperiod(pos) if pos else None
    fires = {}
    for name, b in diagram.blocks.items():
        taus = sorted(set(b.transitions))
        if taus:
            fires[name] = taus
    return ExecutionGraph(grid=grid, hyper=hyper,
                          output_steps=_output_eval_order(diagram),
                          transition_fires=fires)


@dataclass
class InterpResult:
    """Direct diagram execution; signal keys are 'block.signal' paths."""

    diagram: Diagram
    tape: Tape
    times: list
    outputs: dict  # path -> [Var]
    states: dict  # path -> [Var]
    inputs: dict  # external input path -> [Var]
    init_vars: dict
    param_vars: dict  # path -> Var

    def output_trajectory(self) -> Trajectory:
        specs = {f"{n}.{s.name}": _prefix_spec(s, n)
                 for n, b in self.diagram.blocks.items() for s in b.outputs}
        return Trajectory(times=list(self.times),
                          values={k: [v.value for v in vs]
                                  for k, vs in self.outputs.items()},
                          specs=specs)


def interpret(diagram: Diagram, inputs: Optional[dict], t_f, *,
              tape: Optional[Tape] = None, init: Optional[dict] = None,
              params: Optional[dict] = None) -> InterpResult:
    """Execute a diagram directly, stepping connections at every instant.

    This is the reference executor kept alongside `flatten` as its
    equivalence oracle; both are public. `inputs` provides external input
    ports by path; `init`/`params` override by 'block.state' path.
    """
    tape = tape if tape is not None else Tape()
    inputs = inputs or {}
    sched = compile_schedule(diagram, t_f)
    grid = sched.grid
    index_of = {t: i for i, t in enumerate(grid)}
    producers = {dst: src for (src, dst) in diagram.connections}

    providers = {}
    for name, spec in diagram.external_inputs():
        path = f"{name}.{spec.name}"
        if path not in inputs:
            raise MissingInput(f"external input {path!r} not provided")
        p = inputs[path]
        providers[path] = p if callable(p) else (lambda arr: (lambda t: arr))(
            np.asarray(p, dtype=np.float64))

    param_vars = {}
    exec_param_dicts = {}
    for name, b in diagram.blocks.items():
        local = {}
        for pname, pval in b.params.items():
            path = f"{name}.{pname}"
            override = params.get(path) if params else None
            local[pname] = tape.leaf(
                override if override is not None else pval, name=path)
            param_vars[path] = local[pname]
        exec_param_dicts[name] = local

    init_vars = {}
    states = {}
    for name, b in diagram.blocks.items():
        for s in b.states:
            path = f"{name}.{s.name}"
            override = init.get(path) if init else None
            v = tape.leaf(override if override is not None
                          else b.init[s.name], name=f"init.{path}")
            init_vars[path] = v
            states[path] = [v]

    outputs = {f"{n}.{s.name}": [] for n, b in diagram.blocks.items()
               for s in b.outputs}
    ext_inputs = {path: [] for path in providers}
    input_vals = {f"{n}.{s.name}": [] for n, b in diagram.blocks.items()
                  for s in b.inputs}

    def eval_outputs_at(i, t):
        # publish external inputs first
        for path, fn in providers.items():
            ext_inputs[path].append(tape.leaf(fn(t), name=f"{path}@{t}"))
        published = {}
        for blk, outs in sched.output_steps:
            b = diagram.blocks[blk]
            X = {s.name: states[f"{blk}.{s.name}"][i] for s in b.states}
            U = {}
            for s in b.inputs:
                path = f"{blk}.{s.name}"
                if path in producers:
                    src = producers[path]
                    val = published.get(src)
                    if val is None:
                        # not yet published: placeholder (no feedthrough to
                        # the outputs published in this step)
                        context = (list(X.values()) + list(published.values())
                                   + [vs[i] for vs in ext_inputs.values()
                                      if len(vs) > i])
                        val = _zeros_like_port(tape, s, context)
                    U[s.name] = val
                else:
                    U[s.name] = ext_inputs[path][i]
            Y = output_eval(b, X, U, exec_param_dicts[blk], t, tape)
            for o in outs:
                published[f"{blk}.{o}"] = Y[o]
                outputs[f"{blk}.{o}"].append(Y[o])
        # record resolved input values for transition argument lookup
        for blk, b in diagram.blocks.items():
            for s in b.inputs:
                path = f"{blk}.{s.name}"
                src = producers.get(path)
                val = published[src] if src else ext_inputs[path][i]
                input_vals[path].append(val)

    eval_outputs_at(0, grid[0])
    for i in range(len(grid) - 1):
        t, t1 = grid[i], grid[i + 1]
        for blk, b in diagram.blocks.items():
            part = b.state_partition()
            X_t = {s.name: states[f"{blk}.{s.name}"][i] for s in b.states}
            U_t = {s.name: input_vals[f"{blk}.{s.name}"][i] for s in b.inputs}
            nxt = {}
            if CONTINUOUS in part:
                from .blocks import _rk4_advance
                nxt.update(_rk4_advance(b, part[CONTINUOUS], X_t, U_t,
                                        exec_param_dicts[blk], t, t1 - t))
            for tau in sorted(p for p in part if p > 0):
                if t1 % tau == 0:
                    j = index_of[t1 - tau]
                    Xp = {s.name: states[f"{blk}.{s.name}"][j]
                          for s in b.states}
                    Up = {s.name: input_vals[f"{blk}.{s.name}"][j]
                          for s in b.inputs}
                    upd = b.transitions[tau](Xp, Up, exec_param_dicts[blk],
                                             t1 - tau)
                    for n in part[tau]:
                        nxt[n] = upd[n]
                else:
                    for n in part[tau]:
                        nxt[n] = X_t[n]
            for n, v in nxt.items():
                states[f"{blk}.{n}"].append(v)
        eval_outputs_at(i + 1, t1)

    return InterpResult(diagram=diagram, tape=tape, times=list(grid),
                        outputs=outputs, states=states, inputs=ext_inputs,
                        init_vars=init_vars, param_vars=param_vars)


def execute_flattened(diagram: Diagram, inputs: Optional[dict], t_f, *,
                      tape: Optional[Tape] = None, init: Optional[dict] = None,
                      params: Optional[dict] = None) -> ExecResult:
    """flatten + execute with the same grid the interpreter uses."""
    block = flatten(diagram)
    sched = compile_schedule(diagram, t_f)
    return execute_block(block, inputs, t_f, tape=tape, init=init,
                         params=params, grid=sched.grid)
