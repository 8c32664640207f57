"""Reverse-mode differentiation over numpy arrays.

Every differentiable operation returns a :class:`DiffNode` that remembers its
parents and a closure mapping the output gradient to parent gradients.  The
graph is rebuilt on every forward pass and walked once by :func:`backward`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPE = np.float32


def get_dtype() -> type:
    return _DTYPE


def set_dtype(dtype) -> None:
    """Switch the default floating type (float32 for training, float64 for gradient checks)."""
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    previous = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(previous)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class DiffNode:
    """A value in the differentiation graph with an accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        value = np.asarray(value)
        if not np.issubdtype(value.dtype, np.floating):
            value = value.astype(_DTYPE)
        self.value = value
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(value) if requires_grad else None
        self.parents: tuple[DiffNode, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "DiffNode":
        return DiffNode(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffNode(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

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


def as_node(x) -> DiffNode:
    if isinstance(x, DiffNode):
        return x
    if isinstance(x, (int, float)):
        return DiffNode(np.asarray(x, dtype=_DTYPE))
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(_DTYPE)
    return DiffNode(arr)


def make_node(value: np.ndarray, parents: Sequence[DiffNode], backward_fn: BackwardFn) -> DiffNode:
    """Wrap an op result; the closure is recorded only when a parent needs gradients."""
    out = DiffNode(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward_fn
    return out


def _toposort(root: DiffNode) -> list[DiffNode]:
    order: list[DiffNode] = []
    seen: set[int] = set()
    stack: list[tuple[DiffNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: DiffNode) -> None:
    """Populate ``grad`` of every ``requires_grad`` ancestor of a scalar ``loss``.

    Leaf gradients accumulate across calls; interior gradients are released
    once they have been pushed to their parents.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)
            node.grad += g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise RuntimeError(f"gradient shape {pg.shape} does not match {parent.shape}")
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# elementwise arithmetic -----------------------------------------------------


def add(a, b) -> DiffNode:
    a, b = as_node(a), as_node(b)
    return make_node(
        a.value + b.value,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> DiffNode:
    a, b = as_node(a), as_node(b)
    return make_node(
        a.value - b.value,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> DiffNode:
    a, b = as_node(a), as_node(b)
    return make_node(
        a.value * b.value,
        (a, b),
        lambda g: (unbroadcast(g * b.value, a.shape), unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> DiffNode:
    a, b = as_node(a), as_node(b)
    out = a.value / b.value
    return make_node(
        out,
        (a, b),
        lambda g: (unbroadcast(g / b.value, a.shape), unbroadcast(-g * out / b.value, b.shape)),
    )


def neg(a) -> DiffNode:
    a = as_node(a)
    return make_node(-a.value, (a,), lambda g: (-g,))


def square(a) -> DiffNode:
    a = as_node(a)
    return make_node(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def sqrt(a) -> DiffNode:
    """Square root of ``max(a, 0)``.

    The clamp absorbs round-off that pushes a radicand to -1e-12; the
    derivative is taken as 0 wherever the clamped value is 0.
    """
    a = as_node(a)
    out = np.sqrt(np.maximum(a.value, 0))

    def _back(g):
        safe = np.where(out > 0, out, 1)
        return (np.where(out > 0, 0.5 * g / safe, 0).astype(g.dtype),)

    return make_node(out, (a,), _back)


def abs_(a) -> DiffNode:
    a = as_node(a)
    return make_node(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def relu(a) -> DiffNode:
    a = as_node(a)
    mask = a.value > 0
    return make_node(np.where(mask, a.value, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def sigmoid(a) -> DiffNode:
    a = as_node(a)
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return make_node(out, (a,), lambda g: (g * out * (1 - out),))


# reductions and shape ------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a, axis=None, keepdims: bool = False) -> DiffNode:
    a = as_node(a)
    axes = _norm_axes(axis, a.value.ndim)
    out = a.value.sum(axis=axes, keepdims=keepdims)

    def _back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), _back)


def mean(a, axis=None, keepdims: bool = False) -> DiffNode:
    a = as_node(a)
    axes = _norm_axes(axis, a.value.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.value.mean(axis=axes, keepdims=keepdims)

    def _back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype),)

    return make_node(np.asarray(out, dtype=a.dtype), (a,), _back)


def reshape(a, shape) -> DiffNode:
    a = as_node(a)
    return make_node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to(a, shape) -> DiffNode:
    a = as_node(a)
    return make_node(
        np.broadcast_to(a.value, shape).copy(), (a,), lambda g: (unbroadcast(g, a.shape),)
    )


def concat(nodes: Sequence, axis: int = 1) -> DiffNode:
    nodes = [as_node(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def _back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(nodes))
        )

    return make_node(np.concatenate([n.value for n in nodes], axis=axis), nodes, _back)
