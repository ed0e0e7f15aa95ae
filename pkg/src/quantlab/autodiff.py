"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and remembers how it was produced, so that
calling ``backward`` on a scalar loss fills ``.grad`` on every tensor with
``requires_grad=True`` that contributed to it.  The op set is intentionally
small: just enough to express MLPs, quantization bottlenecks, and the
straight-through estimator (``round_ste``).

Conventions:
  * all storage and accumulation is float64,
  * broadcasting follows numpy's trailing-dimension rules and nothing else,
  * tensors are never mutated while part of a live graph; parameter updates
    (``adam_step``) happen between graphs,
  * a graph is built and swept single-threaded; independent graphs may run
    in parallel, and tensors are safe to share read-only.
"""

from __future__ import annotations

from itertools import zip_longest
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradientError(RuntimeError):
    """Raised for invalid backward passes (non-scalar loss, hard round, ...)."""


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (numpy rounds ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    out = []
    for da, db in zip_longest(reversed(a), reversed(b), fillvalue=1):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"cannot broadcast shapes {a} and {b}")
        out.append(max(da, db))
    return tuple(reversed(out))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after trailing-dim broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense float64 array node in an acyclic computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"],
                 backward: Callable[[np.ndarray], None]) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(data, dtype=np.float64)
        t.requires_grad = any(p.requires_grad for p in parents)
        t.grad = None
        t._parents = tuple(parents)
        t._backward = backward if t.requires_grad else None
        return t

    # ------------------------------------------------------------------
    # basics

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._non_scalar()

    def _non_scalar(self):
        raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    # ------------------------------------------------------------------
    # elementwise arithmetic

    @staticmethod
    def _coerce(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        a, b = self, Tensor._coerce(other)
        _broadcast_shape(a.shape, b.shape)
        out = Tensor._from_op(a.data + b.data, (a, b), None)

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))
        out._backward = backward if out.requires_grad else None
        return out

    def __sub__(self, other) -> "Tensor":
        a, b = self, Tensor._coerce(other)
        _broadcast_shape(a.shape, b.shape)
        out = Tensor._from_op(a.data - b.data, (a, b), None)

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g, b.shape))
        out._backward = backward if out.requires_grad else None
        return out

    def __mul__(self, other) -> "Tensor":
        a, b = self, Tensor._coerce(other)
        _broadcast_shape(a.shape, b.shape)
        out = Tensor._from_op(a.data * b.data, (a, b), None)

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))
        out._backward = backward if out.requires_grad else None
        return out

    def __truediv__(self, other) -> "Tensor":
        a, b = self, Tensor._coerce(other)
        _broadcast_shape(a.shape, b.shape)
        out = Tensor._from_op(a.data / b.data, (a, b), None)

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))
        out._backward = backward if out.requires_grad else None
        return out

    def __neg__(self) -> "Tensor":
        out = Tensor._from_op(-self.data, (self,), None)

        def backward(g):
            self._accum(-g)
        out._backward = backward if out.requires_grad else None
        return out

    def __radd__(self, other) -> "Tensor":
        return Tensor._coerce(other) + self

    def __rsub__(self, other) -> "Tensor":
        return Tensor._coerce(other) - self

    def __rmul__(self, other) -> "Tensor":
        return Tensor._coerce(other) * self

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor._coerce(other) / self

    # ------------------------------------------------------------------
    # matmul

    def __matmul__(self, other) -> "Tensor":
        a, b = self, Tensor._coerce(other)
        if a.data.ndim < 2 or b.data.ndim != 2:
            raise ShapeError(
                f"matmul supports (..., m, k) @ (k, n); got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[0]:
            raise ShapeError(
                f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
        out = Tensor._from_op(a.data @ b.data, (a, b), None)

        def backward(g):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                k, n = b.shape
                b._accum(a.data.reshape(-1, k).T @ g.reshape(-1, n))
        out._backward = backward if out.requires_grad else None
        return out

    # ------------------------------------------------------------------
    # elementwise functions

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = Tensor._from_op(y, (self,), None)

        def backward(g):
            self._accum(g * (1.0 - y * y))
        out._backward = backward if out.requires_grad else None
        return out

    def tan(self) -> "Tensor":
        y = np.tan(self.data)
        out = Tensor._from_op(y, (self,), None)

        def backward(g):
            self._accum(g * (1.0 + y * y))
        out._backward = backward if out.requires_grad else None
        return out

    def arccos(self) -> "Tensor":
        x = self.data
        out = Tensor._from_op(np.arccos(x), (self,), None)

        def backward(g):
            self._accum(-g / np.sqrt(1.0 - x * x))
        out._backward = backward if out.requires_grad else None
        return out

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        out = Tensor._from_op(y, (self,), None)

        def backward(g):
            self._accum(g * y)
        out._backward = backward if out.requires_grad else None
        return out

    def log(self) -> "Tensor":
        x = self.data
        out = Tensor._from_op(np.log(x), (self,), None)

        def backward(g):
            self._accum(g / x)
        out._backward = backward if out.requires_grad else None
        return out

    def relu(self) -> "Tensor":
        x = self.data
        out = Tensor._from_op(np.maximum(x, 0.0), (self,), None)

        def backward(g):
            self._accum(g * (x > 0.0))
        out._backward = backward if out.requires_grad else None
        return out

    def round(self) -> "Tensor":
        """Round half away from zero.  Non-differentiable: backward raises.

        Use :func:`round_ste` for the straight-through surrogate.
        """
        out = Tensor._from_op(round_half_away(self.data), (self,), None)

        def backward(g):
            raise GradientError(
                "round() has no gradient; wrap it via round_ste() instead")
        out._backward = backward if out.requires_grad else None
        return out

    def stop_gradient(self) -> "Tensor":
        """Detach: same forward value, no gradient path."""
        return Tensor(self.data)

    # ------------------------------------------------------------------
    # reductions / shape

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        out = Tensor._from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), None)

        def backward(g):
            self._accum(_spread(g, shape, axis, keepdims))
        out._backward = backward if out.requires_grad else None
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        count = self.data.size if axis is None else np.prod(
            [shape[a] for a in _norm_axes(axis, len(shape))])
        out = Tensor._from_op(self.data.mean(axis=axis, keepdims=keepdims), (self,), None)

        def backward(g):
            self._accum(_spread(g, shape, axis, keepdims) / count)
        out._backward = backward if out.requires_grad else None
        return out

    def softmax(self, axis: int = -1) -> "Tensor":
        x = self.data
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor._from_op(y, (self,), None)

        def backward(g):
            inner = (g * y).sum(axis=axis, keepdims=True)
            self._accum(y * (g - inner))
        out._backward = backward if out.requires_grad else None
        return out

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        out = Tensor._from_op(self.data.reshape(shape), (self,), None)

        def backward(g):
            self._accum(g.reshape(old))
        out._backward = backward if out.requires_grad else None
        return out

    def take_rows(self, indices: np.ndarray) -> "Tensor":
        """Embedding-style lookup: rows of a 2-D tensor at integer ``indices``.

        Output shape is ``indices.shape + self.shape[1:]``; backward scatters
        with accumulation (duplicate indices sum).
        """
        if self.data.ndim != 2:
            raise ShapeError(f"take_rows needs a 2-D tensor, got shape {self.shape}")
        idx = np.asarray(indices)
        out = Tensor._from_op(self.data[idx], (self,), None)

        def backward(g):
            gw = np.zeros_like(self.data)
            np.add.at(gw, idx.reshape(-1), g.reshape(-1, self.data.shape[1]))
            self._accum(gw)
        out._backward = backward if out.requires_grad else None
        return out

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"transpose needs a 2-D tensor, got shape {self.shape}")
        out = Tensor._from_op(self.data.T, (self,), None)

        def backward(g):
            self._accum(g.T)
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def T(self) -> "Tensor":
        return self.transpose()


def _norm_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _spread(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduction gradient back to the pre-reduction shape."""
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        for a in sorted(_norm_axes(axis, len(shape))):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def round_ste(x: Tensor) -> Tensor:
    """Round with straight-through gradients: forward rounds, backward is identity.

    Built as ``x + stop_gradient(round(x) - x)`` so the gradient path is
    literally the identity through the addition node.
    """
    return x + (x.round() - x).stop_gradient()


def ste(x: Tensor, value: np.ndarray) -> Tensor:
    """Custom-gradient node: forward takes ``value``, backward copies to ``x``.

    Used where the replaced forward (e.g. a codebook lookup) cannot be written
    as x + stop_gradient(f(x) - x) without floating-point drift in the forward
    value.  ``value`` must have x's shape.
    """
    value = np.asarray(value, dtype=np.float64)
    if value.shape != x.shape:
        raise ShapeError(f"ste value shape {value.shape} does not match {x.shape}")
    out = Tensor._from_op(value, (x,), None)

    def backward(g):
        x._accum(g)
    out._backward = backward if out.requires_grad else None
    return out


def backward(loss: Tensor) -> None:
    """Reverse-topological gradient accumulation from a scalar loss.

    Every tensor on a ``requires_grad`` path gets ``.grad`` populated;
    tensors feeding several consumers sum all incoming contributions.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def init_adam_state(params: Sequence[Tensor]) -> dict:
    return {
        "t": 0,
        "m": [np.zeros_like(p.data) for p in params],
        "v": [np.zeros_like(p.data) for p in params],
    }


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: dict,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One Adam update, in place on ``params`` and ``state``."""
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} does not match param {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
