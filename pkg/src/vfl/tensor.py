"""
Reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure propagating the upstream gradient to them.  Closures capture the numpy
arrays seen during the forward pass, so parameters may be rebound by an
optimizer before ``backward`` runs without corrupting the recorded graph.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class TraceConsumedError(RuntimeError):
    """Raised when ``backward`` is called a second time on the same output."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up in values or gradients."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out the axes numpy broadcasting introduced
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array with an optional gradient slot."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._backward is not None

    # ---------------------------------------------------------------- backward
    def backward(self, upstream=None) -> None:
        """Propagate gradients from this output to every tracked leaf.

        Leaf gradients accumulate into ``.grad``.  A given output may only be
        differentiated once.
        """
        if self._consumed:
            raise TraceConsumedError("backward already called on this trace")
        if upstream is None:
            if self.size != 1:
                raise ValueError("upstream gradient required for non-scalar output")
            upstream = np.ones_like(self.data)
        upstream = _as_array(upstream)
        if upstream.shape != self.shape:
            raise ValueError(f"upstream shape {upstream.shape} != output shape {self.shape}")
        self._consumed = True

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.tracked and id(parent) not in seen:
                    stack.append((parent, False))

        grads = {id(self): upstream}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.tracked:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # --------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return mul(self, power(other, -1.0))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    if any(p.tracked for p in parents):
        return Tensor(data, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def check_finite(t: Tensor, where: str = "") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"non-finite values {where}".strip())
    return t


# ------------------------------------------------------------------ arithmetic
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    return _node(x * y, (a, b),
                 lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))


def power(a: Tensor, p: float) -> Tensor:
    x = a.data
    return _node(x ** p, (a,), lambda g: (g * p * x ** (p - 1),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data

    def back(g):
        if y.ndim == 1:
            gx = np.multiply.outer(g, y) if a.tracked else None
            gy = np.tensordot(x, g, axes=(tuple(range(x.ndim - 1)), tuple(range(g.ndim)))) \
                if b.tracked else None
            return gx, gy
        gx = _unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape) if a.tracked else None
        gy = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape) if b.tracked else None
        return gx, gy

    if x.ndim == 1 and y.ndim == 2:
        return reshape(matmul(reshape(a, (1, x.shape[0])), b), (y.shape[1],))
    return _node(x @ y, (a, b), back)


def linear(x, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` as a single node; ``w`` is ``(out, in)``, ``x`` is ``(..., in)``."""
    x = as_tensor(x)
    xd, wd = x.data, w.data
    y = xd @ wd.T
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd if x.tracked else None
        gw = g2.T @ xd.reshape(-1, xd.shape[-1]) if w.tracked else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.tracked else None)

    return _node(y, parents, back)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    x = a.data

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(x.sum(axis=axis, keepdims=keepdims), (a,), back)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _node(a.data[index], (a,), back)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, back)


def take_rows(table: Tensor, index) -> Tensor:
    """Gather rows of a 2-D table; the embedding lookup."""
    index = np.asarray(index, dtype=np.int64)
    rows = table.shape[0]

    def back(g):
        full = np.zeros(table.shape)
        np.add.at(full, index.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    if index.size and (index.min() < 0 or index.max() >= rows):
        raise IndexError(f"row index out of range [0, {rows})")
    return _node(table.data[index], (table,), back)


# ----------------------------------------------------------------- elementwise
def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _node(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (a,), back)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(y, (a,), back)


def signed_sqrt(a: Tensor, eps: float = 1e-12) -> Tensor:
    """``sign(x) * sqrt(|x|)``, with ``eps`` keeping the slope finite at zero."""
    x = a.data
    r = np.sqrt(np.abs(x) + eps)
    y = np.sign(x) * (r - np.sqrt(eps))
    return _node(y, (a,), lambda g: (g * 0.5 / r,))


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    x = a.data
    norm = np.maximum(np.sqrt((x * x).sum(axis=axis, keepdims=True)), eps)
    y = x / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _node(y, (a,), back)


def layer_norm(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise the last axis to zero mean and unit variance (no affine part)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _node(y, (a,), back)


def where_mask(a: Tensor, mask: np.ndarray, fill: float) -> Tensor:
    """Replace entries where ``mask`` is False with the constant ``fill``."""
    mask = np.broadcast_to(mask, a.shape)
    return _node(np.where(mask, a.data, fill), (a,), lambda g: (g * mask,))
