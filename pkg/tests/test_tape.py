import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcbd.errors import (NonFiniteValue, NonScalarRoot, ShapeMismatch,
                         UnknownOp)
from dcbd.tape import (Tape, Tensor, backward, check_gradient, clamp, concat,
                       exp, jvp, log, max_reduce, maximum_const, relu,
                       sigmoid, softplus, sqrt, square, tanh)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestTensor:
    def test_rejects_nonfinite(self):
        with pytest.raises(NonFiniteValue):
            Tensor([1.0, np.nan])
        with pytest.raises(NonFiniteValue):
            Tensor([np.inf])
        Tensor([np.inf], allow_nonfinite=True)  # diagnostics escape hatch

    def test_shape_and_size(self):
        t = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        assert t.shape == (2, 3)
        assert t.size == 6
        assert t.data.flags.c_contiguous
        assert not t.data.flags.writeable

    def test_scalar_is_rank_zero(self):
        t = Tensor(3.5)
        assert t.shape == ()
        assert t.item() == 3.5


class TestRecord:
    def test_add_values(self):
        t = Tape()
        a, b = t.leaf([1.0, 2.0]), t.leaf([3.0, 4.0])
        assert (a + b).value.tolist() == [4.0, 6.0]

    def test_matmul_shape(self):
        t = Tape()
        A = t.leaf(np.ones((2, 3)))
        x = t.leaf(np.ones(3))
        assert (A @ x).shape == (2,)

    def test_matmul_inner_dim_mismatch(self):
        t = Tape()
        A = t.leaf(np.ones((2, 3)))
        x = t.leaf(np.ones(2))
        with pytest.raises(ShapeMismatch):
            A @ x

    def test_broadcast_limited(self):
        t = Tape()
        m = t.leaf(np.ones((2, 3)))
        s = t.leaf(2.0)
        r = t.leaf(np.ones(3))
        assert (m + s).shape == (2, 3)
        assert (m + r).shape == (2, 3)
        bad = t.leaf(np.ones(2))
        with pytest.raises(ShapeMismatch):
            m + bad  # no general broadcasting

    def test_unknown_op(self):
        t = Tape()
        a = t.leaf([1.0])
        with pytest.raises(UnknownOp):
            t.record("frobnicate", [a])

    def test_replay_determinism(self):
        def build():
            t = Tape()
            x = t.leaf([0.3, -1.2, 2.0])
            y = tanh(x * 2.0) + sigmoid(x).sqnorm()
            return y.array.copy()

        first, second = build(), build()
        assert np.array_equal(first, second)


class TestBackward:
    def test_sum_of_squares(self):
        t = Tape()
        x = t.leaf([1.0, 2.0, 3.0])
        g = backward(t, square(x).sum())
        assert g.get(x).tolist() == [2.0, 4.0, 6.0]

    def test_abs_residual_gain(self):
        # d|a - b*kappa|/d kappa = sign(a - b*kappa) * (-b) = -1 at these values
        t = Tape()
        kappa = t.leaf(0.5)
        a, b = t.leaf(1.02), t.leaf(1.0)
        root = abs(a - b * kappa)
        g = backward(t, root)
        assert g.get(kappa).item() == -1.0

        report = check_gradient(
            lambda tp, ls: abs(tp.lift(1.02) - tp.lift(1.0) * ls[0]),
            [Tensor(0.5)])
        assert report.passed and report.max_rel_err < 1e-8

    def test_relu_policy_at_zero(self):
        t = Tape()
        x = t.leaf(0.0)
        g = backward(t, relu(x))
        assert g.get(x).item() == 0.0

    def test_abs_policy_at_zero(self):
        t = Tape()
        x = t.leaf(0.0)
        assert backward(t, abs(x)).get(x).item() == 0.0

    def test_clamp_policy_at_bound(self):
        t = Tape()
        x = t.leaf([-2.0, 0.0, 1.0, 2.0])
        g = backward(t, clamp(x, -1.0, 1.0).sum())
        assert g.get(x).tolist() == [0.0, 1.0, 0.0, 0.0]

    def test_maxreduce_tie_lowest_index(self):
        t = Tape()
        x = t.leaf([3.0, 5.0, 5.0])
        g = backward(t, max_reduce(x))
        assert g.get(x).tolist() == [0.0, 1.0, 0.0]

    def test_fanout_accumulation_bit_identical(self):
        def g_of(x):
            return sigmoid(x * 1.7).sqnorm()

        t = Tape()
        x = t.leaf([0.4, -0.9])
        single = backward(t, g_of(x)).array(x)
        t2 = Tape()
        x2 = t2.leaf([0.4, -0.9])
        double = backward(t2, g_of(x2) + g_of(x2)).array(x2)
        assert np.array_equal(double, 2.0 * single)

    def test_nonscalar_root_rejected(self):
        t = Tape()
        x = t.leaf([1.0, 2.0])
        with pytest.raises(NonScalarRoot):
            backward(t, x)

    def test_gradstore_zero_for_untouched(self):
        t = Tape()
        x = t.leaf([1.0, 2.0])
        y = t.leaf([5.0])
        g = backward(t, square(x).sum())
        assert g.get(y).tolist() == [0.0]
        assert g.get(x).shape == x.shape


class TestJvp:
    def test_square_scalar(self):
        t = Tape()
        x = t.leaf(3.0)
        y = square(x)
        tans = jvp(t, {x: 1.0})
        assert tans[y.nid] == pytest.approx(6.0)

    def test_linear_map_is_matrix_action(self):
        r = rng(1)
        A = r.normal(size=(4, 3))
        v = r.normal(size=3)
        t = Tape()
        x = t.leaf(np.zeros(3))
        y = t.leaf(A) @ x
        tans = jvp(t, {x: v})
        np.testing.assert_allclose(tans[y.nid], A @ v, rtol=1e-14)

    def test_tangent_shape_mismatch(self):
        t = Tape()
        x = t.leaf([1.0, 2.0])
        square(x)
        with pytest.raises(ShapeMismatch):
            jvp(t, {x: [1.0, 2.0, 3.0]})


def _unary_cases():
    r = rng(7)
    vec = r.normal(size=5)
    pos = np.abs(vec) + 0.5
    return [
        ("neg", lambda v: -v, vec),
        ("abs", lambda v: abs(v), vec + 0.01),
        ("square", square, vec),
        ("sqrt", sqrt, pos),
        ("exp", exp, vec),
        ("log", log, pos),
        ("tanh", tanh, vec),
        ("sigmoid", sigmoid, vec),
        ("relu", relu, vec + 0.01),
        ("softplus", softplus, vec),
        ("smul", lambda v: v * 2.5, vec),
        ("maxconst", lambda v: maximum_const(v, 0.1), vec),
        ("clamp", lambda v: clamp(v, -0.7, 0.7), vec),
        ("sum", lambda v: v.sum(), vec),
        ("mean", lambda v: v.mean(), vec),
        ("sqnorm", lambda v: v.sqnorm(), vec),
        ("maxreduce", lambda v: max_reduce(v), vec),
        ("reshape", lambda v: v.reshape((5, 1)), vec),
        ("slice", lambda v: v.slice(0, 1, 4), vec),
    ]


@pytest.mark.parametrize("name,fn,x", _unary_cases(), ids=lambda c: c if isinstance(c, str) else "")
def test_adjoint_identity_unary(name, fn, x):
    # <vbar, JVP(v)> == <VJP(vbar), v> for every primitive
    r = rng(hash(name) % 2**32)
    t = Tape()
    leaf = t.leaf(x)
    out = fn(leaf)
    v = r.normal(size=x.shape)
    vbar_arr = r.normal(size=out.shape)
    flat = out.reshape((out.array.size,)) if out.shape else out.reshape((1,))
    vbar = t.leaf(vbar_arr.reshape(flat.shape))
    root = flat.dot(vbar)
    pullback = backward(t, root).array(leaf)
    lhs = float(np.dot(jvp(t, {leaf: v})[out.nid].ravel(), vbar_arr.ravel()))
    rhs = float(np.dot(pullback.ravel(), v.ravel()))
    assert abs(lhs - rhs) < 1e-10


def _binary_cases():
    r = rng(9)
    a = r.normal(size=(3, 4))
    b = r.normal(size=(3, 4))
    row = r.normal(size=4)
    s = np.asarray(1.3)
    m1 = r.normal(size=(3, 4))
    m2 = r.normal(size=(4, 2))
    vec = r.normal(size=4)
    return [
        ("add", lambda x, y: x + y, a, b),
        ("add_row", lambda x, y: x + y, a, row),
        ("add_scalar", lambda x, y: x + y, a, s),
        ("sub", lambda x, y: x - y, a, b),
        ("mul", lambda x, y: x * y, a, b),
        ("mul_row", lambda x, y: x * y, a, row),
        ("matmul", lambda x, y: x @ y, m1, m2),
        ("matvec", lambda x, y: x @ y, m1, vec),
        ("vecmat", lambda x, y: x @ y, vec, m2),
        ("dot", lambda x, y: x.dot(y), vec, r.normal(size=4)),
        ("concat", lambda x, y: concat([x, y], axis=0), vec, r.normal(size=4)),
    ]


@pytest.mark.parametrize("name,fn,xa,xb", _binary_cases(), ids=lambda c: c if isinstance(c, str) else "")
def test_adjoint_identity_binary(name, fn, xa, xb):
    r = rng(abs(hash(name)) % 2**32)
    t = Tape()
    la, lb = t.leaf(xa), t.leaf(xb)
    out = fn(la, lb)
    va = r.normal(size=xa.shape)
    vb = r.normal(size=xb.shape)
    vbar_arr = r.normal(size=out.shape)
    flat = out.reshape((out.array.size,)) if out.shape else out.reshape((1,))
    vbar = t.leaf(vbar_arr.reshape(flat.shape))
    root = flat.dot(vbar)
    store = backward(t, root)
    lhs = float(np.dot(jvp(t, {la: va, lb: vb})[out.nid].ravel(),
                       vbar_arr.ravel()))
    rhs = float(np.dot(store.array(la).ravel(), va.ravel())
                + np.dot(store.array(lb).ravel(), vb.ravel()))
    assert abs(lhs - rhs) < 1e-10


class TestCheckGradient:
    def test_polynomial(self):
        def f(tp, ls):
            x = ls[0]
            return (square(x) * 0.5 + x * 3.0).sum() + square(x).sqnorm()

        report = check_gradient(f, [rng(3).normal(size=4)])
        assert report.passed
        assert report.max_rel_err < 1e-6

    def test_relu_kink_flagged(self):
        report = check_gradient(
            lambda tp, ls: relu(ls[0]).sum(), [np.array([0.5, 0.0, -0.5])])
        assert (0, 1) in report.kinks
        assert report.passed  # kink coordinate excluded from pass/fail

    def test_constant_function(self):
        report = check_gradient(
            lambda tp, ls: tp.lift(7.0) + ls[0].sum() * 0.0, [np.ones(3)])
        assert report.passed
        assert report.max_rel_err == 0.0

    def test_deep_composition(self):
        def f(tp, ls):
            x = ls[0]
            h = tanh(x) * 2.0
            return sigmoid(h).sqnorm() + exp(h * 0.1).sum()

        report = check_gradient(f, [rng(11).normal(size=6)])
        assert report.passed
        assert report.max_rel_err < 1e-5


@settings(deadline=None, max_examples=30, derandomize=True)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.integers(0, 2**31))
def test_chain_adjoint_identity_property(xs, seed):
    r = rng(seed)
    x = np.asarray(xs)
    t = Tape()
    leaf = t.leaf(x)
    out = softplus(tanh(leaf * 0.7) + 0.3).sqnorm()
    v = r.normal(size=x.shape)
    lhs = float(jvp(t, {leaf: v})[out.nid])
    rhs = float(np.dot(backward(t, out).array(leaf), v))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_dump_lists_nodes():
    t = Tape()
    x = t.leaf([1.0, 2.0], name="x")
    square(x).sum()
    text = t.dump()
    assert "leaf" in text and "square" in text and "sum" in text
