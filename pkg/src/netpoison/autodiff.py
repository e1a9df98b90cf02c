"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 ndarray together with the closure that
propagates gradients to its parents.  Calling :func:`backward` on a scalar
tensor walks the recorded graph once in reverse topological order and
accumulates ``.grad`` on every tensor that participates.

Only the operations needed by the graph model live here; each one stores
exactly what its backward pass needs and nothing else.  All arithmetic is
float64 so finite-difference checks against these gradients are meaningful.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

Array = np.ndarray


def _as_array(value) -> Array:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # Leading axes that were added by broadcasting are summed away.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # Axes of size one in the target were stretched; sum them back.
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph.

    ``parents`` and ``_backward`` are empty for leaves.  ``grad`` is
    populated by :func:`backward`; it is ``None`` until then.
    """

    __slots__ = ("data", "grad", "parents", "_backward")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[Array], None] | None = None,
    ) -> None:
        self.data: Array = _as_array(data)
        self.grad: Array | None = None
        self.parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # Operator sugar covers the handful of spots where it reads better
    # than the function form.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def _accumulate(t: Tensor, g: Array) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(root: Tensor) -> None:
    """Populate ``.grad`` over the graph below ``root``.

    ``root`` must be a scalar (shape ``()``); its seed gradient is 1.
    Existing ``.grad`` values in the graph are cleared first so repeated
    calls do not mix runs.
    """
    if root.data.shape != ():
        raise ValueError("backward() requires a scalar root tensor")

    # Iterative post-order walk; recursion would overflow on deep chains.
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    def bwd(g: Array) -> None:
        _accumulate(a, g * c)

    return Tensor(a.data * c, (a,), bwd)


def add_const(a: Tensor, c: float) -> Tensor:
    def bwd(g: Array) -> None:
        _accumulate(a, g)

    return Tensor(a.data + c, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product.  Vectors are not accepted; keep everything 2-D."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out_data = a.data @ b.data

    def bwd(g: Array) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor(out_data, (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def bwd(g: Array) -> None:
        _accumulate(a, g * mask)

    return Tensor(a.data * mask, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, g * (1.0 - out_data * out_data))

    return Tensor(out_data, (a,), bwd)


def pow_const(a: Tensor, p: float) -> Tensor:
    out_data = a.data ** p

    def bwd(g: Array) -> None:
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return Tensor(out_data, (a,), bwd)


def gather_rows(a: Tensor, index: Iterable[int]) -> Tensor:
    """Select rows of a 2-D tensor; the index itself is a constant."""
    idx = np.asarray(list(index), dtype=np.intp)
    out_data = a.data[idx]

    def bwd(g: Array) -> None:
        full = np.zeros_like(a.data)
        # np.add.at handles a repeated index, though the pooler never
        # produces one.
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return Tensor(out_data, (a,), bwd)


def max_rows(a: Tensor) -> Tensor:
    """Column-wise max over the rows of a 2-D tensor, keeping a row shape.

    Ties route the whole gradient to the lowest row index, matching
    np.argmax, so the subgradient choice is deterministic.
    """
    if a.data.ndim != 2:
        raise ValueError("max_rows expects a 2-D operand")
    winners = np.argmax(a.data, axis=0)
    out_data = a.data[winners, np.arange(a.data.shape[1])].reshape(1, -1)

    def bwd(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[winners, np.arange(a.data.shape[1])] = g.reshape(-1)
        _accumulate(a, full)

    return Tensor(out_data, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        _accumulate(a, np.full_like(a.data, float(g)))

    return Tensor(a.data.sum(), (a,), bwd)


def pick(a: Tensor, row: int, col: int) -> Tensor:
    """Extract one element of a 2-D tensor as a scalar."""
    out_data = a.data[row, col]

    def bwd(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[row, col] = float(g)
        _accumulate(a, full)

    return Tensor(out_data, (a,), bwd)


def log_softmax_row(a: Tensor) -> Tensor:
    """Row-wise log-softmax of a (1, k) tensor, numerically shifted."""
    if a.data.ndim != 2 or a.data.shape[0] != 1:
        raise ValueError("log_softmax_row expects a (1, k) operand")
    shifted = a.data - a.data.max()
    lse = np.log(np.exp(shifted).sum())
    out_data = shifted - lse
    soft = np.exp(out_data)

    def bwd(g: Array) -> None:
        _accumulate(a, g - soft * g.sum())

    return Tensor(out_data, (a,), bwd)


def neg_log(a: Tensor) -> Tensor:
    """-log(a) for a positive scalar."""
    out_data = -np.log(a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, -g / a.data)

    return Tensor(out_data, (a,), bwd)


def hinge_at(a: Tensor, threshold: float) -> Tensor:
    """max(0, a - threshold) for a scalar; gradient 0 exactly at the kink."""
    shifted = a.data - threshold
    active = shifted > 0.0
    out_data = shifted if active else np.zeros_like(a.data)

    def bwd(g: Array) -> None:
        if active:
            _accumulate(a, g)

    return Tensor(out_data, (a,), bwd)
