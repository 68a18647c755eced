"""Reverse- and forward-mode automatic differentiation over dense tensors.

Execution is recorded as a tape (a Wengert list): node ids strictly increase
in recording order, so the tape is already a topologically sorted DAG. A
single reverse sweep in decreasing id order yields vector-Jacobian products;
a forward sweep in increasing id order yields Jacobian-vector products.

Values are 64-bit floats throughout. Scalars are rank-0 tensors and
broadcasting is limited to scalar-with-tensor plus row-vector-with-matrix
(the latter is what lets one recording drive a whole batch); anything wider
is rejected so every backward rule stays auditable.

Non-smooth primitives carry declared policies: relu'(0)=0, abs'(0)=0,
sqrt'(0)=0, max-reduce ties route the full cotangent to the lowest index,
and clamp passes cotangents only strictly inside its bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import NonFiniteValue, NonScalarRoot, ShapeMismatch, UnknownOp


def _asarray(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """Immutable dense row-major float64 array with shape."""

    __slots__ = ("data",)

    def __init__(self, values, allow_nonfinite: bool = False):
        arr = _asarray(values)
        if not allow_nonfinite and not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"non-finite entries in tensor of shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        return f"Tensor({self.data!r})"

    @staticmethod
    def zeros(shape) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=np.float64))

    @staticmethod
    def full(shape, value: float) -> "Tensor":
        return Tensor(np.full(shape, float(value), dtype=np.float64))


def as_tensor(values) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(values)


# --------------------------------------------------------------------------
# Op registry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OpDef:
    """Forward rule plus both derivative actions of one primitive."""

    forward: Callable  # (arrays, attrs) -> (value, saved)
    backward: Callable  # (arrays, value, saved, attrs, grad) -> per-input grads
    jvp: Callable  # (arrays, value, saved, attrs, tangents) -> tangent


_OPS: dict[str, OpDef] = {}


def register_op(name: str, opdef: OpDef) -> None:
    if name in _OPS:
        raise ValueError(f"op {name!r} already registered")
    _OPS[name] = opdef


def _binary_out_shape(sa: tuple, sb: tuple) -> tuple:
    if sa == sb:
        return sa
    if sa == ():
        return sb
    if sb == ():
        return sa
    if len(sa) == 2 and sb == (sa[1],):
        return sa
    if len(sb) == 2 and sa == (sb[1],):
        return sb
    raise ShapeMismatch(f"incompatible elementwise shapes {sa} and {sb}")


def _reg_binary(name, fwd, d_a, d_b):
    def forward(arrays, attrs):
        a, b = arrays
        _binary_out_shape(a.shape, b.shape)
        return fwd(a, b), None

    def backward(arrays, value, saved, attrs, g):
        a, b = arrays
        return (K.reduce_to(d_a(g, a, b), a.shape),
                K.reduce_to(d_b(g, a, b), b.shape))

    def jvp(arrays, value, saved, attrs, tans):
        a, b = arrays
        ta, tb = tans
        out = np.zeros(_binary_out_shape(a.shape, b.shape), dtype=np.float64)
        if ta is not None:
            out = out + d_a(ta, a, b)
        if tb is not None:
            out = out + d_b(tb, a, b)
        return _asarray(out)

    register_op(name, OpDef(forward, backward, jvp))


_reg_binary("add", lambda a, b: K.add(a, b),
            d_a=lambda g, a, b: g, d_b=lambda g, a, b: g)
_reg_binary("sub", lambda a, b: K.sub(a, b),
            d_a=lambda g, a, b: g, d_b=lambda g, a, b: K.neg(g))
_reg_binary("mul", lambda a, b: K.mul(a, b),
            d_a=lambda g, a, b: K.mul(g, b), d_b=lambda g, a, b: K.mul(g, a))


def _reg_unary(name, fwd, bwd_from):
    """bwd_from: 'x' passes the input, 'y' passes the forward value."""

    fwd_k = fwd
    bwd_k = getattr(K, f"{name}_bwd", None)

    def forward(arrays, attrs):
        return fwd_k(arrays[0]), None

    if bwd_from == "x":
        def backward(arrays, value, saved, attrs, g):
            return (bwd_k(g, arrays[0]),)

        def jvp(arrays, value, saved, attrs, tans):
            return bwd_k(tans[0], arrays[0])
    else:
        def backward(arrays, value, saved, attrs, g):
            return (bwd_k(g, value),)

        def jvp(arrays, value, saved, attrs, tans):
            return bwd_k(tans[0], value)

    register_op(name, OpDef(forward, backward, jvp))


def _reg_simple():
    register_op("neg", OpDef(
        lambda arrays, attrs: (K.neg(arrays[0]), None),
        lambda arrays, value, saved, attrs, g: (K.neg(g),),
        lambda arrays, value, saved, attrs, tans: K.neg(tans[0]),
    ))
    _reg_unary("abs", K.abs_, "x")
    _reg_unary("square", K.square, "x")
    _reg_unary("sqrt", K.sqrt, "y")
    _reg_unary("exp", K.exp, "y")
    _reg_unary("log", K.log, "x")
    _reg_unary("tanh", K.tanh, "y")
    _reg_unary("sigmoid", K.sigmoid, "y")
    _reg_unary("relu", K.relu, "x")
    _reg_unary("softplus", K.softplus, "x")


_reg_simple()


def _reg_scalar_attr():
    register_op("smul", OpDef(
        lambda arrays, attrs: (K.smul(arrays[0], attrs["c"]), None),
        lambda arrays, value, saved, attrs, g: (K.smul(g, attrs["c"]),),
        lambda arrays, value, saved, attrs, tans: K.smul(tans[0], attrs["c"]),
    ))
    register_op("maxconst", OpDef(
        lambda arrays, attrs: (K.maxconst(arrays[0], attrs["c"]), None),
        lambda arrays, value, saved, attrs, g: (
            K.maxconst_bwd(g, arrays[0], attrs["c"]),),
        lambda arrays, value, saved, attrs, tans: K.maxconst_bwd(
            tans[0], arrays[0], attrs["c"]),
    ))
    register_op("clamp", OpDef(
        lambda arrays, attrs: (K.clamp(arrays[0], attrs["lo"], attrs["hi"]), None),
        lambda arrays, value, saved, attrs, g: (
            K.clamp_bwd(g, arrays[0], attrs["lo"], attrs["hi"]),),
        lambda arrays, value, saved, attrs, tans: K.clamp_bwd(
            tans[0], arrays[0], attrs["lo"], attrs["hi"]),
    ))


_reg_scalar_attr()


def _reg_reductions():
    register_op("sum", OpDef(
        lambda arrays, attrs: (K.sum_all(arrays[0]), None),
        lambda arrays, value, saved, attrs, g: (
            K.fill(arrays[0].shape, float(g)),),
        lambda arrays, value, saved, attrs, tans: K.sum_all(tans[0]),
    ))
    register_op("mean", OpDef(
        lambda arrays, attrs: (K.mean_all(arrays[0]), None),
        lambda arrays, value, saved, attrs, g: (
            K.fill(arrays[0].shape, float(g) / arrays[0].size),),
        lambda arrays, value, saved, attrs, tans: K.mean_all(tans[0]),
    ))

    def dot_fwd(arrays, attrs):
        a, b = arrays
        if a.ndim != 1 or a.shape != b.shape:
            raise ShapeMismatch(f"dot needs equal vectors, got {a.shape}, {b.shape}")
        return K.dot(a, b), None

    register_op("dot", OpDef(
        dot_fwd,
        lambda arrays, value, saved, attrs, g: (
            K.smul(arrays[1], float(g)), K.smul(arrays[0], float(g))),
        lambda arrays, value, saved, attrs, tans: _asarray(
            (K.dot(tans[0], arrays[1]) if tans[0] is not None else 0.0)
            + (K.dot(arrays[0], tans[1]) if tans[1] is not None else 0.0)),
    ))
    register_op("sqnorm", OpDef(
        lambda arrays, attrs: (K.sqnorm(arrays[0]), None),
        lambda arrays, value, saved, attrs, g: (
            K.smul(arrays[0], 2.0 * float(g)),),
        lambda arrays, value, saved, attrs, tans: _asarray(
            2.0 * K.dot(arrays[0].ravel(), tans[0].ravel())),
    ))

    def maxreduce_fwd(arrays, attrs):
        val, idx = K.maxreduce(arrays[0], attrs["axis"])
        return val, idx

    register_op("maxreduce", OpDef(
        maxreduce_fwd,
        lambda arrays, value, saved, attrs, g: (
            K.maxreduce_bwd(g, arrays[0].shape, saved, attrs["axis"]),),
        lambda arrays, value, saved, attrs, tans: _gather_like(
            tans[0], saved, attrs["axis"]),
    ))


def _gather_like(t, idx, axis):
    if axis is None:
        return np.asarray(t.ravel()[int(idx)], dtype=np.float64)
    return _asarray(np.take_along_axis(
        t, np.expand_dims(idx, axis), axis).squeeze(axis))


_reg_reductions()


def _reg_structure():
    def concat_fwd(arrays, attrs):
        axis = attrs["axis"]
        ref = arrays[0]
        for a in arrays[1:]:
            if a.ndim != ref.ndim:
                raise ShapeMismatch("concat rank mismatch")
            for d in range(ref.ndim):
                if d != axis and a.shape[d] != ref.shape[d]:
                    raise ShapeMismatch(
                        f"concat shapes {a.shape} vs {ref.shape} on axis {axis}")
        return _asarray(np.concatenate(arrays, axis=axis)), None

    def concat_bwd(arrays, value, saved, attrs, g):
        axis = attrs["axis"]
        grads, ofs = [], 0
        for a in arrays:
            n = a.shape[axis]
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(ofs, ofs + n)
            grads.append(_asarray(g[tuple(sl)]))
            ofs += n
        return tuple(grads)

    def concat_jvp(arrays, value, saved, attrs, tans):
        parts = [t if t is not None else np.zeros_like(a)
                 for a, t in zip(arrays, tans)]
        return _asarray(np.concatenate(parts, axis=attrs["axis"]))

    register_op("concat", OpDef(concat_fwd, concat_bwd, concat_jvp))

    def slice_fwd(arrays, attrs):
        x = arrays[0]
        axis, start, stop = attrs["axis"], attrs["start"], attrs["stop"]
        if not (0 <= start <= stop <= x.shape[axis]):
            raise ShapeMismatch(
                f"slice [{start}:{stop}] out of range for axis {axis} of {x.shape}")
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(start, stop)
        return _asarray(x[tuple(sl)]), None

    def slice_bwd(arrays, value, saved, attrs, g):
        x = arrays[0]
        out = np.zeros_like(x)
        sl = [slice(None)] * x.ndim
        sl[attrs["axis"]] = slice(attrs["start"], attrs["stop"])
        out[tuple(sl)] = g
        return (out,)

    register_op("slice", OpDef(
        slice_fwd, slice_bwd,
        lambda arrays, value, saved, attrs, tans: slice_fwd(tans, attrs)[0],
    ))

    def reshape_fwd(arrays, attrs):
        x = arrays[0]
        shape = tuple(attrs["shape"])
        if int(np.prod(shape, dtype=np.int64)) != x.size:
            raise ShapeMismatch(f"cannot reshape {x.shape} to {shape}")
        return _asarray(x.reshape(shape)), None

    register_op("reshape", OpDef(
        reshape_fwd,
        lambda arrays, value, saved, attrs, g: (
            _asarray(g.reshape(arrays[0].shape)),),
        lambda arrays, value, saved, attrs, tans: _asarray(
            tans[0].reshape(tuple(attrs["shape"]))),
    ))

    def transpose_fwd(arrays, attrs):
        if arrays[0].ndim != 2:
            raise ShapeMismatch("transpose expects a matrix")
        return K.transpose(arrays[0]), None

    register_op("transpose", OpDef(
        transpose_fwd,
        lambda arrays, value, saved, attrs, g: (K.transpose(g),),
        lambda arrays, value, saved, attrs, tans: K.transpose(tans[0]),
    ))


_reg_structure()


def _matmul_shape(sa: tuple, sb: tuple) -> tuple:
    if len(sa) == 2 and len(sb) == 2 and sa[1] == sb[0]:
        return (sa[0], sb[1])
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return (sa[0],)
    if len(sa) == 1 and len(sb) == 2 and sa[0] == sb[0]:
        return (sb[1],)
    raise ShapeMismatch(f"matmul shapes {sa} and {sb} do not chain")


def _reg_matmul():
    def forward(arrays, attrs):
        a, b = arrays
        _matmul_shape(a.shape, b.shape)
        return K.matmul(a, b), None

    def backward(arrays, value, saved, attrs, g):
        a, b = arrays
        if a.ndim == 2 and b.ndim == 2:
            return K.matmul(g, K.transpose(b)), K.matmul(K.transpose(a), g)
        if a.ndim == 2 and b.ndim == 1:
            return _asarray(np.outer(g, b)), K.matmul(K.transpose(a), g)
        return K.matmul(b, g), _asarray(np.outer(a, g))

    def jvp(arrays, value, saved, attrs, tans):
        a, b = arrays
        ta, tb = tans
        out = np.zeros(_matmul_shape(a.shape, b.shape), dtype=np.float64)
        if ta is not None:
            out = out + K.matmul(ta, b)
        if tb is not None:
            out = out + K.matmul(a, tb)
        return _asarray(out)

    register_op("matmul", OpDef(forward, backward, jvp))


_reg_matmul()


# --------------------------------------------------------------------------
# Tape, nodes, handles
# --------------------------------------------------------------------------

class Node:
    __slots__ = ("op", "inputs", "value", "attrs", "saved")

    def __init__(self, op, inputs, value, attrs, saved):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.attrs = attrs
        self.saved = saved


class Var:
    """Handle to one tape node; supports operator sugar for recording."""

    __slots__ = ("tape", "nid")

    def __init__(self, tape: "Tape", nid: int):
        self.tape = tape
        self.nid = nid

    @property
    def value(self) -> Tensor:
        t = Tensor.__new__(Tensor)
        object.__setattr__(t, "data", self.tape.nodes[self.nid].value)
        return t

    @property
    def array(self) -> np.ndarray:
        return self.tape.nodes[self.nid].value

    @property
    def shape(self) -> tuple:
        return self.tape.nodes[self.nid].value.shape

    def item(self) -> float:
        return self.value.item()

    def _bin(self, op, other):
        other = self.tape.lift(other)
        return self.tape.record(op, [self, other])

    def __add__(self, other):
        return self._bin("add", other)

    def __radd__(self, other):
        return self.tape.lift(other)._bin("add", self)

    def __sub__(self, other):
        return self._bin("sub", other)

    def __rsub__(self, other):
        return self.tape.lift(other)._bin("sub", self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.record("smul", [self], c=float(other))
        return self._bin("mul", other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.tape.record("neg", [self])

    def __matmul__(self, other):
        return self.tape.record("matmul", [self, other])

    def __abs__(self):
        return self.tape.record("abs", [self])

    @property
    def T(self):
        return self.tape.record("transpose", [self])

    def sum(self):
        return self.tape.record("sum", [self])

    def mean(self):
        return self.tape.record("mean", [self])

    def dot(self, other):
        return self.tape.record("dot", [self, other])

    def sqnorm(self):
        return self.tape.record("sqnorm", [self])

    def reshape(self, shape):
        return self.tape.record("reshape", [self], shape=tuple(shape))

    def slice(self, axis: int, start: int, stop: int):
        return self.tape.record("slice", [self], axis=axis, start=start, stop=stop)

    def __repr__(self):
        return f"Var(nid={self.nid}, shape={self.shape})"


class Tape:
    """Recorded forward computation supporting VJP and JVP sweeps."""

    __slots__ = ("nodes", "scratch")

    def __init__(self):
        self.nodes: list[Node] = []
        self.scratch: dict = {}  # per-execution memo space for composed maps

    def __len__(self):
        return len(self.nodes)

    def leaf(self, values, name: Optional[str] = None) -> Var:
        tensor = as_tensor(values)
        self.nodes.append(Node("leaf", (), tensor.data, None, name))
        return Var(self, len(self.nodes) - 1)

    def lift(self, value) -> Var:
        """Leaves Vars alone; wraps numbers/arrays as constant leaves."""
        if isinstance(value, Var):
            if value.tape is not self:
                raise ValueError("mixing Vars from different tapes")
            return value
        return self.leaf(value)

    def record(self, op: str, inputs: Sequence[Var], **attrs) -> Var:
        opdef = _OPS.get(op)
        if opdef is None:
            raise UnknownOp(f"unknown op {op!r}")
        nodes = self.nodes
        ids = []
        arrays = []
        for v in inputs:
            if not isinstance(v, Var) or v.tape is not self:
                raise ValueError("record() inputs must be Vars of this tape")
            ids.append(v.nid)
            arrays.append(nodes[v.nid].value)
        value, saved = opdef.forward(arrays, attrs)
        nodes.append(Node(op, tuple(ids), value, attrs or None, saved))
        return Var(self, len(nodes) - 1)

    def dump(self) -> str:
        """Text DAG listing: node id, op, input ids, shape."""
        lines = []
        for i, n in enumerate(self.nodes):
            name = f" name={n.saved}" if n.op == "leaf" and n.saved else ""
            lines.append(
                f"{i:6d}  {n.op:<10s} in={list(n.inputs)!r:<18s} "
                f"shape={n.value.shape}{name}")
        return "\n".join(lines)


# Convenience recording helpers -------------------------------------------

def exp(v: Var) -> Var:
    return v.tape.record("exp", [v])


def log(v: Var) -> Var:
    return v.tape.record("log", [v])


def tanh(v: Var) -> Var:
    return v.tape.record("tanh", [v])


def sigmoid(v: Var) -> Var:
    return v.tape.record("sigmoid", [v])


def relu(v: Var) -> Var:
    return v.tape.record("relu", [v])


def softplus(v: Var) -> Var:
    return v.tape.record("softplus", [v])


def sqrt(v: Var) -> Var:
    return v.tape.record("sqrt", [v])


def square(v: Var) -> Var:
    return v.tape.record("square", [v])


def clamp(v: Var, lo: float, hi: float) -> Var:
    return v.tape.record("clamp", [v], lo=float(lo), hi=float(hi))


def maximum_const(v: Var, c: float) -> Var:
    return v.tape.record("maxconst", [v], c=float(c))


def max_reduce(v: Var, axis: Optional[int] = None) -> Var:
    return v.tape.record("maxreduce", [v], axis=axis)


def concat(vs: Sequence[Var], axis: int = 0) -> Var:
    return vs[0].tape.record("concat", list(vs), axis=axis)


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

class GradStore:
    """Cotangents per node id; absent entries mean zero."""

    __slots__ = ("tape", "grads")

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        self.tape = tape
        self.grads = grads

    def get(self, var: Var) -> Tensor:
        g = self.grads.get(var.nid)
        if g is None:
            return Tensor.zeros(var.shape)
        return Tensor(g, allow_nonfinite=True)

    def array(self, var: Var) -> np.ndarray:
        g = self.grads.get(var.nid)
        return np.zeros(var.shape) if g is None else g

    def __contains__(self, var: Var) -> bool:
        return var.nid in self.grads


def backward(tape: Tape, root: Var) -> GradStore:
    """Reverse sweep: cotangent of `root` w.r.t. every node.

    The root must be scalar-shaped (one element). Fan-out contributions
    accumulate in reverse schedule order, which is fixed and reproducible.
    """
    nodes = tape.nodes
    root_val = nodes[root.nid].value
    if root_val.size != 1:
        raise NonScalarRoot(f"backward root has shape {root_val.shape}")
    grads: dict[int, np.ndarray] = {root.nid: np.ones_like(root_val)}
    for nid in range(root.nid, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        node = nodes[nid]
        if not node.inputs:
            continue
        opdef = _OPS[node.op]
        arrays = [nodes[i].value for i in node.inputs]
        in_grads = opdef.backward(arrays, node.value, node.saved,
                                  node.attrs or {}, g)
        for iid, ig in zip(node.inputs, in_grads):
            if ig is None:
                continue
            acc = grads.get(iid)
            if acc is None:
                grads[iid] = np.array(ig, dtype=np.float64)
            else:
                acc += ig
    return GradStore(tape, grads)


def jvp(tape: Tape, tangents: dict) -> dict[int, np.ndarray]:
    """Forward sweep: directional derivative at every node.

    `tangents` maps leaf Vars (or node ids) to tangent tensors; missing
    leaves carry zero tangent. Returns a map from node id to tangent.
    """
    seeds: dict[int, np.ndarray] = {}
    for k, t in tangents.items():
        nid = k.nid if isinstance(k, Var) else int(k)
        arr = as_tensor(t).data
        if arr.shape != tape.nodes[nid].value.shape:
            raise ShapeMismatch(
                f"tangent shape {arr.shape} != leaf shape "
                f"{tape.nodes[nid].value.shape}")
        seeds[nid] = arr
    out: dict[int, np.ndarray] = {}
    for nid, node in enumerate(tape.nodes):
        if not node.inputs:
            out[nid] = seeds.get(nid, np.zeros_like(node.value))
            continue
        opdef = _OPS[node.op]
        arrays = [tape.nodes[i].value for i in node.inputs]
        tans = [out[i] for i in node.inputs]
        out[nid] = opdef.jvp(arrays, node.value, node.saved,
                             node.attrs or {}, tans)
    return out


# --------------------------------------------------------------------------
# Finite-difference validation
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Comparison of reverse-mode gradients against central differences."""

    max_rel_err: float
    n_checked: int
    tol: float
    failures: list = field(default_factory=list)  # (leaf, coord, ad, fd, err)
    kinks: list = field(default_factory=list)  # (leaf, coord) excluded coords

    @property
    def passed(self) -> bool:
        return not self.failures


def check_gradient(fn, points, step: float = 1e-5, tol: float = 1e-5,
                   kink_rel: float = 1e-2) -> GradCheckReport:
    """Check d(fn)/d(points) against central finite differences.

    `fn(tape, leaves) -> Var` must be scalar-valued and is re-invoked on a
    fresh tape per evaluation. Coordinates where the one-sided differences
    disagree (a kink within `step` of the point) are flagged and excluded
    from pass/fail.
    """
    points = [as_tensor(p) for p in points]

    def evaluate(vals):
        t = Tape()
        leaves = [t.leaf(v) for v in vals]
        out = fn(t, leaves)
        return float(out.array.reshape(()).item())

    base_tape = Tape()
    base_leaves = [base_tape.leaf(p) for p in points]
    root = fn(base_tape, base_leaves)
    if root.array.size != 1:
        raise NonScalarRoot("check_gradient needs a scalar-valued function")
    store = backward(base_tape, root)
    f0 = float(root.array.reshape(()).item())

    report = GradCheckReport(max_rel_err=0.0, n_checked=0, tol=tol)
    for li, p in enumerate(points):
        ad = store.array(base_leaves[li]).ravel()
        flat = p.data.ravel()
        for ci in range(flat.size):
            plus = flat.copy()
            minus = flat.copy()
            plus[ci] += step
            minus[ci] -= step
            vals_p = list(points)
            vals_m = list(points)
            vals_p[li] = Tensor(plus.reshape(p.shape))
            vals_m[li] = Tensor(minus.reshape(p.shape))
            fp = evaluate(vals_p)
            fm = evaluate(vals_m)
            central = (fp - fm) / (2.0 * step)
            fwd = (fp - f0) / step
            bwd = (f0 - fm) / step
            if abs(fwd - bwd) > kink_rel * max(1.0, abs(fwd), abs(bwd)):
                report.kinks.append((li, ci))
                continue
            err = abs(ad[ci] - central) / max(abs(ad[ci]), abs(central), 1.0)
            report.n_checked += 1
            if err > report.max_rel_err:
                report.max_rel_err = err
            if err > tol:
                report.failures.append((li, ci, float(ad[ci]), central, err))
    return report
