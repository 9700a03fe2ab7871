"""Dense tensor with tape-free reverse-mode differentiation.

Every differentiable op returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks the graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import GraphError, NonFiniteError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def check_finite(arr: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")
    return arr


class Tensor:
    """n-d array of reals with an optional accumulated gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        check_finite(data, op)
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # -- elementwise algebra (enough for residual sums and tests) -------------
    def __add__(self, other: "Tensor") -> "Tensor":
        other = _as_tensor(other, self.dtype)
        if self.shape != other.shape:
            raise ShapeError(f"add: shapes differ {self.shape} vs {other.shape}")
        return Tensor._from_op(self.data + other.data, (self, other), lambda g: (g, g), "add")

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        if np.isscalar(other):
            c = float(other)
            return Tensor._from_op(self.data * c, (self,), lambda g: (g * c,), "scale")
        other = _as_tensor(other, self.dtype)
        if self.shape != other.shape:
            raise ShapeError(f"mul: shapes differ {self.shape} vs {other.shape}")
        a, b = self.data, other.data
        return Tensor._from_op(a * b, (self, other), lambda g: (g * b, g * a), "mul")

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-_as_tensor(other, self.dtype))

    def sum(self) -> "Tensor":
        shape = self.shape
        return Tensor._from_op(
            np.asarray(self.data.sum()), (self,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
        )

    def mean(self) -> "Tensor":
        n = self.size
        return self.sum() * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return Tensor._from_op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad=grad)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(
    output: Tensor,
    parameters: Iterable[Tensor] | None = None,
    grad: np.ndarray | None = None,
) -> dict[int, np.ndarray] | None:
    """Reverse-mode accumulation from a scalar ``output``.

    Gradients accumulate into ``.grad`` of every leaf with ``requires_grad``.
    When ``parameters`` is given, a mapping ``id(param) -> grad`` is returned
    in which unreachable parameters get zeros.
    """
    if not isinstance(output, Tensor):
        raise GraphError("backward expects a Tensor produced by a forward pass")
    if grad is None:
        if output.size != 1:
            raise GraphError(f"backward needs a scalar output, got shape {output.shape}")
        grad = np.ones_like(output.data)
    if not output.requires_grad:
        raise GraphError("backward called on a tensor with no recorded forward graph")

    order = _topo_order(output)
    pending: dict[int, np.ndarray] = {id(output): np.asarray(grad, dtype=output.dtype)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            check_finite(pg, f"backward of {node._op}")
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    if parameters is None:
        return None
    return {
        id(p): (p.grad if p.grad is not None else np.zeros_like(p.data)) for p in parameters
    }
