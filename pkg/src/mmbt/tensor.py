"""Dense float64 tensors with define-by-run reverse-mode autodiff.

Every op builds a new :class:`Tensor` whose ``_backward`` closure maps the
upstream gradient to one gradient per parent.  The graph is implicit in the
parent links and is rebuilt on every forward pass.

Broadcasting is deliberately narrow: binary ops accept equal shapes, a
python scalar, or an operand whose shape is a trailing suffix of the other
(expansion along leading axes only).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import IndexOutOfRange, NotScalar, NumericalError, ShapeMismatch

_GELU_C = math.sqrt(2.0 / math.pi)


def _as_array(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    return arr


class Tensor:
    """A node in the computation graph.

    ``data`` is a row-major float64 ndarray.  Leaves created by the user
    carry ``requires_grad``; intermediate nodes inherit it from their parents
    and are only linked into the graph when some parent requires grad.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        if not np.isfinite(data).all():
            raise NumericalError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -other if not isinstance(other, Tensor) else neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


# ---------------------------------------------------------------------------
# broadcasting helpers


def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b:
        return
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if len(small) == len(big) or big[len(big) - len(small):] != small:
        raise ShapeMismatch(f"{op}: cannot broadcast {a} with {b} along leading axes")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# ---------------------------------------------------------------------------
# binary elementwise


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        c = float(b)
        return Tensor._from_op(a.data + c, (a,), lambda g: (g,), "add_scalar")
    if not isinstance(a, Tensor):
        return add(b, a)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape

    def _bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, (a, b), _bw, "add")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def _bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), _bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading (batch) axes must be equal, or one operand may omit some of
    them, in which case it is shared across the batch.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner extents differ: {a.shape} x {b.shape}")
    ba, bb = a.shape[:-2], b.shape[:-2]
    if ba != bb:
        small, big = (ba, bb) if len(ba) <= len(bb) else (bb, ba)
        if big[len(big) - len(small):] != small:
            raise ShapeMismatch(f"matmul batch axes differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def _bw(g):
        ga = gb = None
        if need_a:
            if ad.ndim == 2 and g.ndim > 2:
                ga = np.einsum("...mn,...kn->mk", g, bd)
            else:
                ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if need_b:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor._from_op(ad @ bd, (a, b), _bw, "matmul")


# ---------------------------------------------------------------------------
# unary elementwise


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def gelu(a: Tensor) -> Tensor:
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * x2 * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def _bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return Tensor._from_op(out, (a,), _bw, "gelu")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    return Tensor._from_op(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return Tensor._from_op(e, (a,), lambda g: (g * e,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return Tensor._from_op(out, (a,), lambda g: (g / x,), "log")


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    x = a.data
    return Tensor._from_op(np.logaddexp(0.0, x), (a,), lambda g: (g * _stable_sigmoid(x),), "softplus")


_UNARY = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid, "exp": exp}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name to one of the pointwise ops."""
    if kind in _UNARY:
        return _UNARY[kind](as_tensor(a))
    if kind == "add":
        return add(as_tensor(a), b)
    if kind == "mul":
        return mul(as_tensor(a), as_tensor(b))
    if kind == "scale":
        return scale(as_tensor(a), float(b))
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and normalisations


def sum_(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis)

    def _bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._from_op(np.asarray(out, dtype=np.float64), (a,), _bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis), 1.0 / float(n))


def softmax_last(a: Tensor) -> Tensor:
    if a.size == 0:
        raise ShapeMismatch("softmax of an empty tensor")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(s, (a,), _bw, "softmax")


def log_softmax_last(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def _bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return Tensor._from_op(out, (a,), _bw, "log_softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    if eps < 0:
        raise ValueError("eps must be non-negative")
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layer_norm params must be ({d},)")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def _bw(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op(out, (a, gain, bias), _bw, "layer_norm")


# ---------------------------------------------------------------------------
# indexing and layout


def embedding_lookup(table: Tensor, indices: Iterable[int]) -> Tensor:
    idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)
    idx = idx.reshape(-1)
    v = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise IndexOutOfRange(f"embedding index outside [0, {v})")
    tshape = table.shape

    def _bw(g):
        gt = np.zeros(tshape)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor._from_op(table.data[idx], (table,), _bw, "embedding")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(
        np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),), "transpose"
    )


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def select(a: Tensor, axis: int, index: int) -> Tensor:
    """Pick one slice along ``axis``, dropping that axis."""
    shape = a.shape
    axis = axis % a.ndim

    def _bw(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return Tensor._from_op(np.take(a.data, index, axis=axis).copy(), (a,), _bw, "select")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, _bw, "concat")


def stack_padded(tensors: Sequence[Tensor], length: int | None = None) -> Tensor:
    """Stack [T_i, ...] tensors into [B, T, ...], zero-padding along axis 0."""
    lengths = [t.shape[0] for t in tensors]
    T = max(lengths) if length is None else length
    if T < max(lengths):
        raise ShapeMismatch("pad length shorter than a sequence")
    tail = tensors[0].shape[1:]
    out = np.zeros((len(tensors), T) + tail)
    for i, t in enumerate(tensors):
        out[i, : lengths[i]] = t.data

    def _bw(g):
        return tuple(g[i, : lengths[i]].copy() for i in range(len(lengths)))

    return Tensor._from_op(out, tensors, _bw, "stack_padded")


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return Tensor._from_op(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# backward


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar.

    Returns a map from every reachable ``requires_grad`` tensor (leaves and
    intermediates) to its gradient.  Leaf tensors also get ``.grad`` set,
    overwritten rather than accumulated, so repeated calls agree.
    """
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if not loss.requires_grad:
        return {}
    order = _topological(loss)
    grads[id(loss)] = np.ones_like(loss.data)
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out: dict[Tensor, np.ndarray] = {}
    for node in order:
        if id(node) in grads:
            out[node] = grads[id(node)]
            if node._backward is None:
                node.grad = grads[id(node)]
    return out


# ---------------------------------------------------------------------------
# finite-difference check


def grad_check(forward: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``forward`` must rebuild the graph on each call and return a scalar.  The
    relative error per coordinate uses max(|analytic|, |numeric|, 1e-8) as
    the denominator.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    for p in params:
        p.grad = None
    loss = forward()
    grads = backward(loss)
    worst = 0.0
    for p in params:
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = forward().item()
            flat[i] = orig - h
            fm = forward().item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
