import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperprune import numeric as nm
from hyperprune.errors import DimensionError, DomainError, NumericError, ShapeError, StateError
from hyperprune.numeric import Graph, Tensor, _pykernels


def conv2d_loop(x, w, b, stride, pad):
    """Direct nested-loop convolution (cross-correlation)."""
    B, C, H, W = x.shape
    N, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = (H + 2 * pad - k) // stride + 1, (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, N, oh, ow))
    for bi in range(B):
        for n in range(N):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[bi, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[bi, n, i, j] = np.sum(patch * w[n]) + (b[n] if b is not None else 0.0)
    return out


def conv_transpose_loop(x, w, b, stride, pad, op):
    """Scatter each input pixel times the kernel; w is (C_in, C_out, k, k)."""
    B, C, H, W = x.shape
    _, N, k, _ = w.shape
    full_h, full_w = (H - 1) * stride + k, (W - 1) * stride + k
    out = np.zeros((B, N, full_h + op, full_w + op))
    for bi in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    out[bi, :, i * stride:i * stride + k, j * stride:j * stride + k] += x[bi, c, i, j] * w[c]
    oh = (H - 1) * stride - 2 * pad + k + op
    ow = (W - 1) * stride - 2 * pad + k + op
    out = out[:, :, pad:pad + oh, pad:pad + ow]
    if b is not None:
        out = out + b[None, :, None, None]
    return out


CONV_CASES = [(2, 3, 6, 4, 3, 1, 1), (1, 2, 8, 3, 4, 2, 1), (2, 1, 5, 2, 1, 1, 0), (1, 3, 7, 2, 3, 2, 0)]


@pytest.mark.parametrize("B,C,H,N,k,s,p", CONV_CASES)
def test_conv2d_matches_loop(B, C, H, N, k, s, p):
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((B, C, H, H)), rng.standard_normal((N, C, k, k)), rng.standard_normal(N)
    got = nm.conv2d(Tensor(x), Tensor(w), Tensor(b), s, p).data
    np.testing.assert_allclose(got, conv2d_loop(x, w, b, s, p), atol=1e-12)


@pytest.mark.parametrize("B,C,H,N,k,s,p,op", [(2, 3, 3, 2, 4, 2, 1, 0), (1, 2, 4, 3, 3, 2, 1, 1), (1, 1, 2, 2, 4, 1, 0, 0)])
def test_conv_transpose_matches_loop(B, C, H, N, k, s, p, op):
    rng = np.random.default_rng(1)
    x, w, b = rng.standard_normal((B, C, H, H)), rng.standard_normal((C, N, k, k)), rng.standard_normal(N)
    got = nm.conv_transpose2d(Tensor(x), Tensor(w), Tensor(b), s, p, op).data
    np.testing.assert_allclose(got, conv_transpose_loop(x, w, b, s, p, op), atol=1e-12)


def test_conv_transpose_is_adjoint_of_conv():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 4, 4))
    y = rng.standard_normal((2, 4, 4, 4))
    lhs = np.sum(nm.conv2d(Tensor(x), Tensor(w), None, 2, 1).data * y)
    # conv weight (N, C, k, k) read as a transposed-conv weight (C_in=N, C_out=C, k, k)
    rhs = np.sum(x * nm.conv_transpose2d(Tensor(y), Tensor(w), None, 2, 1).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_kernel_backends_bitwise_equal():
    ck = pytest.importorskip("hyperprune.numeric._ckernels")
    rng = np.random.default_rng(3)
    for dtype in (np.float64, np.float32):
        xp = rng.standard_normal((2, 3, 10, 10)).astype(dtype)
        a = _pykernels.im2col(xp, 4, 2, 4, 4)
        b = np.asarray(ck.im2col(xp, 4, 2, 4, 4))
        assert np.array_equal(a, b)
        cols = rng.standard_normal((2, 48, 16)).astype(dtype)
        assert np.array_equal(_pykernels.col2im(cols, 3, 4, 2, 4, 4, 10, 10),
                              np.asarray(ck.col2im(cols, 3, 4, 2, 4, 4, 10, 10)))


def test_pure_python_fallback_selected_by_env():
    env = dict(os.environ, HYPERPRUNE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from hyperprune import numeric; print(numeric.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def _fd_check(fn, *shapes, seed=0, positive=False, tol=1e-6):
    rng = np.random.default_rng(seed)
    xs = []
    for s in shapes:
        d = rng.uniform(0.5, 2.0, s) if positive else rng.standard_normal(s)
        xs.append(Tensor(d, requires_grad=True))
    probe = rng.standard_normal(fn(*xs).shape)
    loss = nm.tsum(fn(*xs) * Tensor(probe))
    nm.backward(loss)
    for x in xs:
        numeric = nm.finite_diff_grad(lambda _x: nm.tsum(fn(*xs) * Tensor(probe)), x, 1e-6)
        np.testing.assert_allclose(x.grad, numeric, rtol=tol, atol=tol)


@pytest.mark.parametrize("name", ["tanh", "sigmoid", "log_sigmoid", "exp", "square", "leaky_relu", "relu", "abs"])
def test_unary_gradients(name):
    fn = nm.tabs if name == "abs" else getattr(nm, name)
    _fd_check(fn, (3, 4), seed=hash(name) % 100)


def test_binary_and_shape_op_gradients():
    _fd_check(lambda a, b: a * b - a / 4.0 + (b - a) * 0.5, (2, 3), (2, 3))
    _fd_check(lambda a: nm.log(a), (4,), positive=True)
    _fd_check(lambda a, b: nm.matmul(a, b), (3, 4), (4, 2))
    _fd_check(lambda a, b: nm.outer(a, b), (3,), (5,))
    _fd_check(lambda A, x: nm.bmv(A, x), (2, 3, 4, 5), (2, 3, 5))
    _fd_check(lambda a, b: nm.concat([a, b], axis=1), (2, 3), (2, 2))
    _fd_check(lambda a: nm.transpose(nm.reshape(a, (3, 4)), (1, 0))[1:3], (12,))
    _fd_check(lambda a: nm.broadcast_to(nm.reshape(a, (3, 1)), (3, 4)), (3,))
    _fd_check(lambda a: nm.mean(a, axis=1) + nm.tsum(a, axis=1), (3, 4))
    _fd_check(lambda a: nm.upsample_nearest(a, 2), (1, 2, 3, 3))


def test_conv_gradients():
    _fd_check(lambda x, w, b: nm.conv2d(x, w, b, 2, 1), (2, 2, 6, 6), (3, 2, 4, 4), (3,))
    _fd_check(lambda x, w, b: nm.conv_transpose2d(x, w, b, 2, 1, 1), (1, 2, 3, 3), (2, 3, 3, 3), (3,))


@pytest.mark.parametrize("fn,axes", [(nm.instance_norm, (2, 3)), (nm.batch_norm, (0, 2, 3))])
def test_norms_match_formula_and_gradients(fn, axes):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 2, 4, 4)) * 3 + 1
    g, b = rng.standard_normal(2), rng.standard_normal(2)
    mu = x.mean(axis=axes, keepdims=True)
    var = x.var(axis=axes, keepdims=True)
    ref = (x - mu) / np.sqrt(var + 1e-5) * g[None, :, None, None] + b[None, :, None, None]
    np.testing.assert_allclose(fn(Tensor(x), Tensor(g), Tensor(b)).data, ref, atol=1e-12)
    _fd_check(lambda x_, g_, b_: fn(x_, g_, b_), (3, 2, 4, 4), (2,), (2,), tol=1e-5)


def test_backward_twice_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = nm.tsum(nm.square(x))
    nm.backward(loss)
    with pytest.raises(StateError):
        nm.backward(loss)


def test_graph_reset_allows_second_pass_and_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = nm.tsum(x * x)
    g = Graph(loss)
    nm.backward(loss, g)
    g.reset()
    nm.backward(loss, g)
    np.testing.assert_array_equal(x.grad, 4 * x.data)


def test_graph_order_is_topological():
    a = Tensor(np.ones(2), requires_grad=True)
    b = a * a
    c = nm.tanh(b) + b
    loss = nm.tsum(c)
    order = {id(n): i for i, n in enumerate(Graph(loss).nodes)}
    for n in Graph(loss).nodes:
        for p in n._parents:
            if p.requires_grad:
                assert order[id(p)] < order[id(n)]
    assert Graph(loss).leaves == [a]


def test_errors():
    with pytest.raises(DimensionError):
        nm.mul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(DomainError):
        nm.log(Tensor(np.array([1.0, -1.0])))
    with pytest.raises(NumericError):
        nm.exp(Tensor(np.array([1000.0])))
    with pytest.raises(ShapeError):
        nm.conv_output_size(6, 3, 2, 0)
    with pytest.raises(StateError):
        nm.sgd_step([Tensor(np.ones(2), requires_grad=True)], 0.1)
    with pytest.raises(DimensionError):
        nm.backward(Tensor(np.ones(2), requires_grad=True))


def test_scalar_broadcast_and_sgd_step():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    nm.backward(nm.tsum(x * 3.0))
    nm.sgd_step([x], 0.5)
    np.testing.assert_array_equal(x.data, [-0.5, -3.5])
    assert x.grad is None


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with nm.no_grad():
        y = x * x
    assert not y.requires_grad


def test_float32_precision_switch():
    try:
        nm.set_default_dtype("float32")
        assert Tensor([1.0, 2.0]).data.dtype == np.float32
    finally:
        nm.set_default_dtype("float64")
    assert Tensor([1.0]).data.dtype == np.float64


@settings(max_examples=60, deadline=None)
@given(st.floats(-60, 60))
def test_stable_sigmoid_and_log_sigmoid(z):
    s = nm.sigmoid(Tensor(np.array([z]))).data[0]
    ls = nm.log_sigmoid(Tensor(np.array([z]))).data[0]
    assert 0.0 <= s <= 1.0
    assert ls <= 0.0 and np.isfinite(ls)
    assert ls == pytest.approx(-np.logaddexp(0.0, -z), abs=1e-12)


def test_elementwise_dispatch():
    x = Tensor(np.array([-1.0, 2.0]))
    np.testing.assert_array_equal(nm.elementwise("leaky_relu", x, alpha=0.1).data, [-0.1, 2.0])
    with pytest.raises(ValueError):
        nm.elementwise("nope", x)
