"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every node keeps references to its parents and a closure that maps the
upstream gradient to parent gradients.  :func:`backward` walks the graph in
reverse topological order, so each call accumulates each gradient exactly
once.  Graphs are never shared between threads.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or infinity."""


class ShapeError(ValueError):
    pass


def _check(values: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(values).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    return values


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _check(np.asarray(data, dtype=DTYPE), "tensor construction")
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> np.ndarray:
        """Row-major flat copy of the stored values."""
        return self.data.ravel().copy()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(values: np.ndarray, parents: Sequence[Tensor], grad_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _check(values, op)
    out.name = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._grad_fn = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return _node(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore"):
        out = np.log(ad)
    return _node(out, (a,), lambda g: (g / ad,), "log")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient passes only where the input is inside [lo, hi]."""
    a = as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _node(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,), "clip")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _node(a.data * pos, (a,), lambda g: (g * pos,), "relu")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    """Exact (erf) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def grad_fn(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _node(x * cdf, (a,), grad_fn, "gelu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``cond`` is true and ``b`` elsewhere (cond is constant)."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    return _node(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa), _unbroadcast(np.where(cond, 0.0, g), sb)),
        "where",
    )


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), grad_fn, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    """Basic or advanced indexing; repeated advanced indices accumulate."""
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic(idx)

    def grad_fn(g):
        out = np.zeros(shape, dtype=DTYPE)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(np.array(a.data[idx], dtype=DTYPE), (a,), grad_fn, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc

    def grad_fn(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            grads.append(g[tuple(sl)])
        return grads

    return _node(out, tensors, grad_fn, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: {exc}") from exc
    n = len(tensors)
    return _node(out, tensors, lambda g: [np.take(g, i, axis=axis) for i in range(n)], "stack")


# ---------------------------------------------------------------------------
# linear algebra and neural-net primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _node(ad @ bd, (a, b), grad_fn, "matmul")


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` with ``w`` of shape (in, out)."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def logsumexp(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    p = e / s
    return _node(out, (a,), lambda g: (np.expand_dims(g, axis) * p,), "logsumexp")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _node(p, (a,), grad_fn, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def grad_fn(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), grad_fn, "log_softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gamma``/``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: affine shape must be ({x.shape[-1]},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    n = xd.shape[-1]

    def grad_fn(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gx_hat = g * gd
        gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True) - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, ggamma, gbeta

    return _node(xhat * gd + beta.data, (x, gamma, beta), grad_fn, "layer_norm")


def embedding(weight, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    weight = as_tensor(weight)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError("embedding: id out of range")
    return getitem(weight, ids)


def gather_last(a, index) -> Tensor:
    """``out[..., t] = a[..., t, index[..., t]]``; ``index`` broadcasts to ``a.shape[:-1]``."""
    a = as_tensor(a)
    lead = a.shape[:-1]
    index = np.broadcast_to(np.asarray(index, dtype=np.int64), lead)
    if index.size and (index.min() < 0 or index.max() >= a.shape[-1]):
        raise ShapeError("gather_last: index out of range")
    grids = np.indices(lead, sparse=True)
    return getitem(a, (*grids, index))


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``."""
    lp = log_softmax(logits, axis=-1)
    return neg(mean(gather_last(lp, targets)))


def conv1d(x, w, b, stride: int) -> Tensor:
    """Valid 1-D convolution. ``x``: (B, Cin, N); ``w``: (Cout, Cin, k); ``b``: (Cout,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    B, cin, n = x.shape
    cout, cin_w, k = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d: input has {cin} channels, kernel expects {cin_w}")
    if n < k:
        raise ShapeError(f"conv1d: input length {n} shorter than kernel {k}")
    n_out = (n - k) // stride + 1
    xd = x.data
    s0, s1, s2 = xd.strides
    cols = np.lib.stride_tricks.as_strided(
        xd, shape=(B, n_out, cin, k), strides=(s0, s2 * stride, s1, s2), writeable=False
    )
    wd = w.data
    w2 = wd.reshape(cout, cin * k)
    cols2 = cols.reshape(B, n_out, cin * k)
    out = (cols2 @ w2.T).transpose(0, 2, 1) + b.data[None, :, None]

    def grad_fn(g):
        gt = g.transpose(0, 2, 1)  # B, n_out, cout
        gw = np.einsum("bto,btc->oc", gt, cols2).reshape(wd.shape)
        gb = g.sum(axis=(0, 2))
        gcols = (gt @ w2).reshape(B, n_out, cin, k)
        gx = np.zeros_like(xd)
        span = stride * (n_out - 1) + 1
        for j in range(k):
            gx[:, :, j : j + span : stride] += gcols[:, :, :, j].transpose(0, 2, 1)
        return gx, gw, gb

    return _node(out, (x, w, b), grad_fn, "conv1d")


# ---------------------------------------------------------------------------
# differentiation


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(root: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``root`` with respect to each tensor in ``wrt``."""
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    wrt = list(wrt)
    grads: dict[int, np.ndarray] = {}
    if root.requires_grad:
        grads[id(root)] = np.ones_like(root.data)
        for node in reversed(_topo_order(root)):
            g = grads.get(id(node))
            if g is None or node._grad_fn is None:
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if node._parents:
                # interior gradients are no longer needed
                del grads[id(node)]
    return [np.array(grads.get(id(t), np.zeros_like(t.data)), dtype=DTYPE) for t in wrt]


def backward(root: Tensor, params) -> dict[str, np.ndarray]:
    """Gradients of ``root`` for every parameter in ``params`` (a ParamStore or name->Tensor map).

    Parameters the root does not depend on get zero gradients.
    """
    items = list(params.items())
    gs = grad(root, [t for _, t in items])
    return {name: g for (name, _), g in zip(items, gs)}


sum = tsum  # noqa: A001 - mirrors numpy naming for callers using ``tn.sum``
