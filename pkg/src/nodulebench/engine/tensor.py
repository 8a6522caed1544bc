"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure. Calling
``backward()`` on a scalar walks the recorded graph in reverse topological
order and accumulates gradients into every node that requires them, so
gradients of intermediates (not just leaves) stay available after the pass.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _scipy_erf


class EngineError(ValueError):
    """Raised for misuse of the engine (shape abuse, non-finite values, ...)."""


class NonFiniteError(EngineError):
    """An operation produced NaN or +-inf while finite checks were enabled."""


_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> bool:
    """Globally enable/disable NaN/inf screening on op outputs. Returns the old value."""
    global _FINITE_CHECKS
    old = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return old


def _check_finite(data: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, op)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # ---- introspection ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise EngineError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # ---- graph construction helpers ----------------------------------------

    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def _make(self, data, parents, backward, op) -> "Tensor":
        needs = any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=needs, _parents=tuple(parents),
                      _backward=backward if needs else None, op=op)

    # ---- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = self._lift(other)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))

        return self._make(out_data, (self, other), bwd, "add")

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = self._lift(other)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.shape))

        return self._make(out_data, (self, other), bwd, "mul")

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        def bwd(g):
            self._accum(-g)

        return self._make(-self.data, (self,), bwd, "neg")

    def __sub__(self, other) -> "Tensor":
        other = self._lift(other)
        out_data = self.data - other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g, other.shape))

        return self._make(out_data, (self, other), bwd, "sub")

    def __rsub__(self, other) -> "Tensor":
        return self._lift(other) - self

    def __truediv__(self, other) -> "Tensor":
        other = self._lift(other)
        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = self.data / other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / (other.data ** 2), other.shape))

        return self._make(out_data, (self, other), bwd, "div")

    def __rtruediv__(self, other) -> "Tensor":
        return self._lift(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise EngineError("tensor exponents are not supported; use exp/log")
        p = float(exponent)
        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = self.data ** p

        def bwd(g):
            self._accum(g * p * self.data ** (p - 1.0))

        return self._make(out_data, (self,), bwd, "pow")

    def __matmul__(self, other) -> "Tensor":
        other = self._lift(other)
        if self.ndim < 2 or other.ndim < 2:
            raise EngineError("matmul operands must be at least 2-D")
        out_data = self.data @ other.data

        def bwd(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accum(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accum(_unbroadcast(gb, other.shape))

        return self._make(out_data, (self, other), bwd, "matmul")

    # ---- elementwise nonlinearities -----------------------------------------

    def exp(self) -> "Tensor":
        with np.errstate(over="ignore"):
            out_data = np.exp(self.data)

        def bwd(g):
            self._accum(g * out_data)

        return self._make(out_data, (self,), bwd, "exp")

    def log(self) -> "Tensor":
        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = np.log(self.data)

        def bwd(g):
            self._accum(g / self.data)

        return self._make(out_data, (self,), bwd, "log")

    def sqrt(self) -> "Tensor":
        with np.errstate(invalid="ignore"):
            out_data = np.sqrt(self.data)

        def bwd(g):
            self._accum(g * 0.5 / out_data)

        return self._make(out_data, (self,), bwd, "sqrt")

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)

        def bwd(g):
            self._accum(g * (1.0 - out_data ** 2))

        return self._make(out_data, (self,), bwd, "tanh")

    def relu(self) -> "Tensor":
        mask = self.data > 0.0
        out_data = np.where(mask, self.data, 0.0)

        def bwd(g):
            self._accum(g * mask)

        return self._make(out_data, (self,), bwd, "relu")

    def erf(self) -> "Tensor":
        out_data = _scipy_erf(self.data)
        # d/dx erf(x) = 2/sqrt(pi) * exp(-x^2)
        coeff = 2.0 / np.sqrt(np.pi)

        def bwd(g):
            self._accum(g * coeff * np.exp(-self.data ** 2))

        return self._make(out_data, (self,), bwd, "erf")

    # ---- shape manipulation --------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def bwd(g):
            self._accum(g.reshape(self.shape))

        return self._make(out_data, (self,), bwd, "reshape")

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        out_data = np.transpose(self.data, axes)
        inverse = tuple(np.argsort(axes))

        def bwd(g):
            self._accum(np.transpose(g, inverse))

        return self._make(out_data, (self,), bwd, "transpose")

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise EngineError(".T is defined for 2-D tensors only; use transpose(axes)")
        return self.transpose((1, 0))

    def __getitem__(self, key) -> "Tensor":
        out_data = self.data[key]

        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self._accum(full)

        return self._make(out_data, (self,), bwd, "getitem")

    # ---- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if axis is None:
                self._accum(np.full(self.shape, float(np.asarray(g).ravel()[0])))
                return
            gg = g
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                axes = tuple(a % self.ndim for a in axes)
                for a in sorted(axes):
                    gg = np.expand_dims(gg, a)
            self._accum(np.broadcast_to(gg, self.shape).copy())

        return self._make(out_data, (self,), bwd, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a % self.ndim] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ---- backward pass ----------------------------------------------------------

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.size != 1:
            raise EngineError(f"backward() requires a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise EngineError("backward() on a tensor that does not require grad")

        # Iterative post-order DFS; recursion would overflow on deep graphs.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


# ---- free-function conveniences used across the package -------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along `axis`; gradient splits back to the inputs."""
    tensors = [Tensor._lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(int(lo), int(hi))
                t._accum(g[tuple(index)])

    needs = any(t.requires_grad for t in tensors)
    return Tensor(out_data, requires_grad=needs, _parents=tuple(tensors),
                  _backward=bwd if needs else None, op="concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def parameters_vector(params: dict[str, Tensor]) -> np.ndarray:
    """Flatten a parameter dict into one vector (sorted by name)."""
    return np.concatenate([params[k].data.ravel() for k in sorted(params)])
