"""Reverse-mode autodiff over dense numpy arrays.

A :class:`Value` holds a numpy array, a lazily allocated gradient, references
to the values it was computed from and a closure that pushes its gradient
back to them. Graphs are only recorded when at least one input requires a
gradient and recording is enabled (see :func:`no_grad`).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
DEFAULT_DTYPE = np.float64


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Value:
    """Array-valued node in a computation graph."""

    __array_priority__ = 100  # make ndarray <op> Value dispatch to Value

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Value):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Value, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def make(data: np.ndarray, parents: Sequence["Value"], backward) -> "Value":
        """Wrap an op result; ``backward(g)`` must call ``parent._acc`` itself."""
        out = Value(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _acc(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            g = unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Value":
        return Value(self.data)

    # -- backward -----------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(ancestor) into every ancestor's ``grad``.

        ``self`` must be scalar-shaped unless an explicit seed ``grad`` is given.
        Interior nodes drop their gradients once propagated; leaves keep them.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self._acc(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            g = node.grad
            node.grad = None
            node._backward(g)

    # -- misc ---------------------------------------------------------------

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

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Value(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_value(other)
        a, b = self, other

        def bw(g):
            _send(a, g)
            _send(b, g)

        return Value.make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Value.make(-a.data, (a,), lambda g: _send(a, -g))

    def __sub__(self, other):
        other = as_value(other)
        a, b = self, other

        def bw(g):
            _send(a, g)
            _send(b, -g)

        return Value.make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return as_value(other) - self

    def __mul__(self, other):
        other = as_value(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                _send(a, g * b.data)
            if b.requires_grad:
                _send(b, g * a.data)

        return Value.make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_value(other)
        a, b = self, other
        out = a.data / b.data

        def bw(g):
            if a.requires_grad:
                _send(a, g / b.data)
            if b.requires_grad:
                _send(b, -g * out / b.data)

        return Value.make(out, (a, b), bw)

    def __rtruediv__(self, other):
        return as_value(other) / self

    def __pow__(self, p: float):
        if isinstance(p, Value):
            raise TypeError("only constant exponents are supported")
        a = self

        def bw(g):
            _send(a, g * p * a.data ** (p - 1))

        return Value.make(a.data**p, (a,), bw)

    def __matmul__(self, other):
        from .ops import matmul

        return matmul(self, other)

    def __getitem__(self, idx):
        a = self

        basic = _is_basic_index(idx)

        def bw(g):
            full = np.zeros_like(a.data)
            if basic:
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            _send(a, full)

        return Value.make(a.data[idx], (a,), bw)

    # -- reductions and reshapes -------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _send(a, np.broadcast_to(g, a.shape))

        return Value.make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int, keepdims: bool = False):
        a = self
        out = a.data.max(axis=axis, keepdims=True)

        def bw(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            mask = a.data == out
            # ties split evenly
            mask = mask / mask.sum(axis=axis, keepdims=True)
            _send(a, mask * g)

        res = out if keepdims else np.squeeze(out, axis=axis)
        return Value.make(res, (a,), bw)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Value.make(a.data.reshape(shape), (a,), lambda g: _send(a, g.reshape(a.shape)))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        a = self
        inv = np.argsort(axes)
        return Value.make(a.data.transpose(axes), (a,), lambda g: _send(a, g.transpose(inv)))

    @property
    def T(self):
        return self.transpose()

    # -- elementwise nonlinearities ----------------------------------------

    def exp(self):
        a = self
        out = np.exp(a.data)
        return Value.make(out, (a,), lambda g: _send(a, g * out))

    def log(self):
        a = self
        return Value.make(np.log(a.data), (a,), lambda g: _send(a, g / a.data))

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)
        return Value.make(out, (a,), lambda g: _send(a, g * 0.5 / out))

    def abs(self):
        a = self
        return Value.make(np.abs(a.data), (a,), lambda g: _send(a, g * np.sign(a.data)))

    def sigmoid(self):
        a = self
        out = _sigmoid(a.data)
        return Value.make(out, (a,), lambda g: _send(a, g * out * (1.0 - out)))

    def relu(self):
        a = self
        mask = a.data > 0
        return Value.make(a.data * mask, (a,), lambda g: _send(a, g * mask))

    def leaky_relu(self, slope: float = 0.1):
        a = self
        scale = np.where(a.data > 0, 1.0, slope)
        return Value.make(a.data * scale, (a,), lambda g: _send(a, g * scale))

    def squared_relu(self):
        a = self
        r = np.maximum(a.data, 0.0)
        return Value.make(r * r, (a,), lambda g: _send(a, g * 2.0 * r))

    def clamp_min(self, lo: float):
        a = self
        mask = a.data > lo
        return Value.make(np.where(mask, a.data, lo), (a,), lambda g: _send(a, g * mask))


def _send(v: Value, g: np.ndarray) -> None:
    v._acc(g)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _topological_order(root: Value) -> list[Value]:
    """Iterative DFS post-order; raises on cycles."""
    order: list[Value] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Value, int]] = [(root, 0)]
    while stack:
        node, i = stack.pop()
        key = id(node)
        if i == 0:
            if state.get(key) == 2:
                continue
            if state.get(key) == 1:
                raise RuntimeError("computation graph contains a cycle")
            state[key] = 1
        parents = node._parents
        while i < len(parents) and (not parents[i].requires_grad or state.get(id(parents[i])) == 2):
            i += 1
        if i < len(parents):
            child = parents[i]
            if state.get(id(child)) == 1:
                raise RuntimeError("computation graph contains a cycle")
            stack.append((node, i + 1))
            stack.append((child, 0))
        else:
            state[key] = 2
            order.append(node)
    return order


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(np.asarray(x, dtype=DEFAULT_DTYPE))


def concat(values: Iterable[Value], axis: int = 0) -> Value:
    vals = [as_value(v) for v in values]
    sizes = [v.shape[axis] for v in vals]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for v, lo, hi in zip(vals, bounds[:-1], bounds[1:]):
            if v.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _send(v, g[tuple(sl)])

    return Value.make(np.concatenate([v.data for v in vals], axis=axis), vals, bw)


def stack(values: Iterable[Value], axis: int = 0) -> Value:
    vals = [as_value(v) for v in values]

    def bw(g):
        for i, v in enumerate(vals):
            if v.requires_grad:
                _send(v, np.take(g, i, axis=axis))

    return Value.make(np.stack([v.data for v in vals], axis=axis), vals, bw)


def split(x: Value, sizes: Sequence[int], axis: int = 0) -> list[Value]:
    bounds = np.cumsum([0] + list(sizes))
    if bounds[-1] != x.shape[axis]:
        raise ValueError(f"split sizes {list(sizes)} do not cover axis of length {x.shape[axis]}")
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(int(lo), int(hi))
        out.append(x[tuple(sl)])
    return out
