"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tape`` records every operation whose inputs need gradients while it is
active. Nodes are appended in creation order, which is already a valid
topological order, so ``Tape.backward`` just walks the list in reverse.
Outside a tape, operations run as plain numpy with no graph bookkeeping.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     y = (Tensor(np.eye(2)) @ w).sum()
    >>> tape.backward(y)
"""

from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp

from ..errors import NonFinite, NonScalarOutput, ShapeMismatch

# tapes are per thread, so inference in worker threads never records
_LOCAL = threading.local()


def _active() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


class Tape:
    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _active().append(self)
        return self

    def __exit__(self, *exc):
        _active().remove(self)
        return False

    def backward(self, output: "Tensor") -> None:
        if output.data.size != 1:
            raise NonScalarOutput(f"backward needs a scalar, got shape {output.shape}")
        output.grad = np.ones_like(output.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
                # interior gradients are no longer needed once propagated
                if node._parents:
                    node.grad = None
        self.nodes.clear()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    dtype = property(lambda self: self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        # gradients are never mutated in place, so arrays can be shared
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    # a finite sum implies finite entries; only scan fully when it is not
    if not np.isfinite(data.sum()) and not np.all(np.isfinite(data)):
        raise NonFinite("operation produced NaN or Inf")
    out = Tensor(data)
    stack = _active()
    if stack and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        stack[-1].nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(a, b):
    # constants adopt the dtype of the tensor operand
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, b.dtype)
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} and {b.shape}") from exc
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary(a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward)


def matmul(x, w) -> Tensor:
    """``x (..., a) @ w (a, b)``; the linear-map primitive."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"matmul {x.shape} @ {w.shape}")

    def backward(g):
        if x.requires_grad:
            x._accum(g @ w.data.T)
        if w.requires_grad:
            a = x.data.reshape(-1, x.shape[-1])
            w._accum(a.T @ g.reshape(-1, w.shape[1]))

    return _make(x.data @ w.data, (x, w), backward)


def linear(x, w, b=None) -> Tensor:
    """Linear map plus optional bias, fused into one node."""
    if b is None:
        return matmul(x, w)
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"linear {x.shape} @ {w.shape} + {b.shape}")
    out = x.data @ w.data
    out += b.data

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        if x.requires_grad:
            x._accum(g @ w.data.T)
        if w.requires_grad:
            w._accum(x.data.reshape(-1, x.shape[-1]).T @ g2)
        if b.requires_grad:
            b._accum(g2.sum(axis=0))

    return _make(out, (x, w, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)

    def backward(g):
        x._accum(g * (out > 0))

    return _make(out, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign for overflow-free evaluation
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)

    def backward(g):
        x._accum(g * out * (1.0 - out))

    return _make(out, (x,), backward)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def tmax(x, axis: int, keepdims=False) -> Tensor:
    """Max-reduction.

    Exact ties share the gradient equally, which is a valid subgradient and
    much cheaper than locating the first maximizer.
    """
    x = as_tensor(x)
    out = x.data.max(axis=axis, keepdims=True)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        eq = x.data == out
        count = eq.view(np.uint8).sum(axis=axis, keepdims=True, dtype=np.uint16)
        x._accum(eq * (g / count).astype(x.dtype, copy=False))

    return _make(out if keepdims else np.squeeze(out, axis), (x,), backward)


def sqrt(x) -> Tensor:
    """Square root with a zero (sub)gradient at 0."""
    x = as_tensor(x)
    out = np.sqrt(np.maximum(x.data, 0))

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        x._accum(np.where(out > 0, g / (2.0 * safe), 0.0))

    return _make(out, (x,), backward)


def norm(x, axis: int = -1, keepdims=False) -> Tensor:
    """Euclidean norm along ``axis``; gradient is 0 at the origin."""
    x = as_tensor(x)
    out = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1.0)
        x._accum(np.where(out > 0, g * x.data / safe, 0.0))

    return _make(out if keepdims else np.squeeze(out, axis), (x,), backward)


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for x, part in zip(xs, np.split(g, splits, axis=axis)):
            if x.requires_grad:
                x._accum(part)

    return _make(out, tuple(xs), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accum(g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), backward)


def index(x, key) -> Tensor:
    """Basic slicing (no fancy indexing)."""
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        full[key] = g
        x._accum(full)

    return _make(np.array(x.data[key]), (x,), backward)


def gather_points(x, idx: np.ndarray) -> Tensor:
    """Batched row gather: ``x (B, N, C)``, ``idx (B, ...)`` -> ``(B, ..., C)``."""
    x = as_tensor(x)
    b, n, c = x.shape
    idx = np.asarray(idx)
    if idx.shape[0] != b:
        raise ShapeMismatch(f"index batch {idx.shape[0]} != tensor batch {b}")
    flat = (idx.reshape(b, -1) + (np.arange(b) * n)[:, None]).reshape(-1)
    out = x.data.reshape(b * n, c)[flat].reshape(idx.shape + (c,))

    def backward(g):
        # scatter-add through a sparse selection matrix; much faster than np.add.at
        sel = sp.csr_matrix(
            (np.ones(flat.size, dtype=g.dtype), (flat, np.arange(flat.size))),
            shape=(b * n, flat.size),
        )
        x._accum(np.asarray(sel @ g.reshape(-1, c)).reshape(b, n, c))

    return _make(out, (x,), backward)
