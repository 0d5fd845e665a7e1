"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a vector-Jacobian product closure. :func:`backward` orders
the recorded operations topologically and walks them once in reverse.

Broadcasting is deliberately narrow: binary elementwise ops accept either
identical shapes or a 0-d scalar operand. Anything richer has to go through
an explicit :func:`broadcast_to`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DimensionError, DomainError, NumericError, ShapeError, StateError
from . import kernels

_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(name: str) -> None:
    """Switch the storage precision for newly created tensors (``float64`` or ``float32``)."""
    global _DTYPE
    if name not in ("float64", "float32"):
        raise ValueError(f"unsupported dtype {name!r}")
    _DTYPE = np.dtype(name).type


def get_default_dtype():
    return _DTYPE


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op", "_done", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._vjp: Callable | None = None
        self.op = "leaf"
        self._done = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("division is only supported by Python scalars")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == _DTYPE else data.astype(_DTYPE)
    out.grad = None
    out.op = op
    out._done = False
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


# ---------------------------------------------------------------------------
# graph + backward


class Graph:
    """Operations reachable from a loss, in topological order (inputs first)."""

    def __init__(self, loss: Tensor):
        self.loss = loss
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes = order

    @property
    def ops(self) -> list[Tensor]:
        return [n for n in self.nodes if not n.is_leaf]

    @property
    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]

    def reset(self) -> None:
        """Allow another backward pass over the same recorded graph."""
        self.loss._done = False


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every ``requires_grad`` leaf."""
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._done:
        raise StateError("backward already ran on this graph; rebuild the forward pass or reset()")
    if not loss.requires_grad:
        raise StateError("loss does not depend on any tensor requiring grad")
    if graph is None:
        graph = Graph(loss)
    elif graph.loss is not loss:
        raise StateError("graph was recorded for a different loss")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    loss._done = True


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """Plain gradient descent ``p <- p - lr * grad``; clears grads afterwards."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise StateError(f"parameter {p!r} has no gradient")
    for p in params:
        p.data -= lr * p.grad
        p.grad = None


def finite_diff_grad(
    f: Callable[[Tensor], Tensor | float],
    x: Tensor,
    eps: float = 1e-6,
    relative: bool = False,
    indices: Sequence[int] | None = None,
) -> np.ndarray:
    """Central-difference gradient estimate of scalar ``f`` at ``x``.

    With ``relative=True`` the step for element i is ``eps * (1 + |x_i|)``.
    ``indices`` restricts evaluation to a subset of flat positions; the rest
    of the returned array is left at zero.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    positions = range(flat.size) if indices is None else indices

    def value() -> float:
        with no_grad():
            y = f(x)
        return float(y.item() if isinstance(y, Tensor) else y)

    for i in positions:
        orig = flat[i]
        h = eps * (1.0 + abs(orig)) if relative else eps
        flat[i] = orig + h
        up = value()
        flat[i] = orig - h
        down = value()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(x.shape)


# ---------------------------------------------------------------------------
# elementwise


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")

    def vjp(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _result(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")

    def vjp(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _result(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _reduce_to(g * bd, a) if a.requires_grad else None
        gb = _reduce_to(g * ad, b) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), vjp, "mul")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    pos = xd > 0
    return _result(np.where(pos, xd, 0.0), (x,), lambda g: (g * pos,), "relu")


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    xd = x.data
    slope = np.where(xd > 0, 1.0, alpha)
    return _result(xd * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_sigmoid(x: Tensor) -> Tensor:
    """``log(sigmoid(x))`` evaluated without forming ``sigmoid(x)``."""
    xd = x.data
    y = np.minimum(xd, 0.0) - np.log1p(np.exp(-np.abs(xd)))
    s = _stable_sigmoid(-xd)
    return _result(y, (x,), lambda g: (g * s,), "log_sigmoid")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise DomainError("log of a non-positive value")
    return _result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported as NumericError below
        y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,), "exp")


def tabs(x: Tensor) -> Tensor:
    xd = x.data
    return _result(np.abs(xd), (x,), lambda g: (g * np.sign(xd),), "abs")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _result(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


# ---------------------------------------------------------------------------
# shape and reduction


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(np.transpose(x.data, axes))
    return _result(data, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    try:
        data = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {src} to {shape}") from exc
    lead = len(shape) - len(src)

    def vjp(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, d in enumerate(src) if d == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g.reshape(src),)

    return _result(data, (x,), vjp, "broadcast_to")


def getitem(x: Tensor, index) -> Tensor:
    src = x.shape
    data = np.ascontiguousarray(x.data[index])

    def vjp(g):
        full = np.zeros(src, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _result(data, (x,), vjp, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, vjp, "concat")


def tsum(x: Tensor, axis=None) -> Tensor:
    src = x.shape
    if axis is None:
        return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.full(src, g, dtype=x.data.dtype),), "sum")
    axis = tuple(np.atleast_1d(axis))

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _result(x.data.sum(axis=axis), (x,), vjp, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = x.size
    else:
        count = int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis), 1.0 / count)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), vjp, "matmul")


def outer(a: Tensor, b: Tensor) -> Tensor:
    """``a . b^T`` for vectors, as a (len(a), len(b)) matrix."""
    if a.ndim != 1 or b.ndim != 1:
        raise DimensionError(f"outer expects vectors, got {a.shape} and {b.shape}")
    return matmul(reshape(a, (a.shape[0], 1)), reshape(b, (1, b.shape[0])))


def bmv(A: Tensor, x: Tensor) -> Tensor:
    """Batched matrix-vector product: ``out[..., p] = sum_q A[..., p, q] * x[..., q]``."""
    if A.ndim < 2 or A.shape[:-2] != x.shape[:-1] or A.shape[-1] != x.shape[-1]:
        raise DimensionError(f"bmv: shapes {A.shape} and {x.shape} do not line up")
    Ad, xd = A.data, x.data

    def vjp(g):
        gA = g[..., :, None] * xd[..., None, :] if A.requires_grad else None
        gx = np.matmul(np.swapaxes(Ad, -1, -2), g[..., None])[..., 0] if x.requires_grad else None
        return gA, gx

    return _result(np.matmul(Ad, xd[..., None])[..., 0], (A, x), vjp, "bmv")


# ---------------------------------------------------------------------------
# convolution


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"conv: (size {size} + 2*pad {pad} - k {k}) is not a non-negative multiple of stride {stride}"
        )
    return span // stride + 1


def conv_transpose_output_size(size: int, k: int, stride: int, pad: int, output_padding: int = 0) -> int:
    out = (size - 1) * stride - 2 * pad + k + output_padding
    if out <= 0:
        raise ShapeError(f"conv_transpose: non-positive output size {out}")
    return out


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B, C, H, W) with ``w`` (N, C, k, k)."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    b, c, h, wd = x.shape
    n, cw, k, k2 = w.shape
    if cw != c:
        raise DimensionError(f"conv2d: weight expects {cw} input channels, input has {c}")
    if k != k2:
        raise DimensionError("conv2d: only square kernels are supported")
    if bias is not None and bias.shape != (n,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({n},)")
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(wd, k, stride, pad)
    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    hp, wp = xp.shape[2], xp.shape[3]
    cols = kernels.im2col(xp, k, stride, ho, wo)
    wm = w.data.reshape(n, c * k * k)
    out = np.matmul(wm, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(b, n, ho, wo)

    parents = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gm = g.reshape(b, n, ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if x.requires_grad:
            dcols = np.matmul(wm.T, gm)
            dxp = kernels.col2im(dcols, c, k, stride, ho, wo, hp, wp)
            gx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _result(out, parents, vjp, "conv2d")


def conv_transpose2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Fractionally strided convolution; ``w`` has layout (C_in, N_out, k, k)."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv_transpose2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    b, c, h, wd = x.shape
    cw, n, k, k2 = w.shape
    if cw != c:
        raise DimensionError(f"conv_transpose2d: weight leading dim {cw} != input channels {c}")
    if k != k2:
        raise DimensionError("conv_transpose2d: only square kernels are supported")
    if not 0 <= output_padding < max(stride, 1):
        raise ShapeError("conv_transpose2d: output_padding must be smaller than stride")
    if bias is not None and bias.shape != (n,):
        raise DimensionError(f"conv_transpose2d: bias shape {bias.shape} != ({n},)")
    ho = conv_transpose_output_size(h, k, stride, pad, output_padding)
    wo = conv_transpose_output_size(wd, k, stride, pad, output_padding)
    hp, wp = ho + 2 * pad, wo + 2 * pad
    xm = x.data.reshape(b, c, h * wd)
    wm = w.data.reshape(c, n * k * k)
    cols = np.matmul(wm.T, xm)
    canvas = kernels.col2im(cols, n, k, stride, h, wd, hp, wp)
    out = np.ascontiguousarray(canvas[:, :, pad:pad + ho, pad:pad + wo]) if pad else canvas
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        gcols = kernels.im2col(gp, k, stride, h, wd)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(wm, gcols).reshape(x.shape)
        if w.requires_grad:
            gw = np.tensordot(xm, gcols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _result(out, parents, vjp, "conv_transpose2d")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if x.ndim != 4:
        raise DimensionError("upsample expects a 4-d input")
    b, c, h, w = x.shape
    data = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def vjp(g):
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _result(data, (x,), vjp, "upsample")


# ---------------------------------------------------------------------------
# normalization


def _normalize(x: Tensor, gamma: Tensor | None, beta: Tensor | None, axes: tuple, eps: float, op: str) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"{op} expects a 4-d input")
    c = x.shape[1]
    for p in (gamma, beta):
        if p is not None and p.shape != (c,):
            raise DimensionError(f"{op}: affine parameter shape {p.shape} != ({c},)")
    xd = x.data
    count = int(np.prod([xd.shape[a] for a in axes]))
    mu = xd.mean(axis=axes, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gd = gamma.data[None, :, None, None] if gamma is not None else 1.0
    out = xhat * gd
    if beta is not None:
        out = out + beta.data[None, :, None, None]

    parents = tuple(p for p in (x, gamma, beta) if p is not None)

    def vjp(g):
        res = []
        gxhat = g * gd
        gx = inv / count * (
            count * gxhat
            - gxhat.sum(axis=axes, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
        )
        res.append(gx)
        if gamma is not None:
            res.append((g * xhat).sum(axis=(0, 2, 3)))
        if beta is not None:
            res.append(g.sum(axis=(0, 2, 3)))
        return tuple(res)

    return _result(out, parents, vjp, op)


def instance_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes."""
    return _normalize(x, gamma, beta, (2, 3), eps, "instance_norm")


def batch_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization with statistics of the current batch."""
    return _normalize(x, gamma, beta, (0, 2, 3), eps, "batch_norm")
