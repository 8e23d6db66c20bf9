"""Reverse-mode accumulation over numpy arrays.

A :class:`Tape` is an append-only list of nodes.  Each node remembers the
indices of its operands and a closure mapping the output cotangent to operand
cotangents (its local partials).  :class:`Var` wraps an array and, when it is
attached to a tape, the index of the node that produced it.  Vars without a
tape are constants and every op on constants stays off the tape, so the same
code runs as a plain forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError, UsageError


@dataclass
class Node:
    kind: str
    parents: tuple[int, ...]
    vjp: Callable | None


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.param_slots = 0
        self._param_leaves: list[tuple[int, int, tuple]] = []  # (node, offset, shape)

    def __len__(self):
        return len(self.nodes)

    def push(self, kind, parents, vjp) -> int:
        self.nodes.append(Node(kind, tuple(parents), vjp))
        return len(self.nodes) - 1

    def parameters(self, values) -> "Var":
        """Register a block of trainable parameters; slots follow registration order."""
        values = np.array(values, dtype=float)
        idx = self.push("param", (), None)
        self._param_leaves.append((idx, self.param_slots, values.shape))
        self.param_slots += values.size
        return Var(values, self, idx)

    def release(self):
        """Drop every node.  The vjp closures and the Vars form reference cycles
        holding large intermediates, so free them as soon as the gradient is out."""
        self.nodes.clear()
        self._param_leaves.clear()


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def as_var(x) -> "Var":
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=float))


def record(kind: str, data, operands: Sequence["Var"], vjp) -> "Var":
    """Create the output Var of an op, putting a node on the operands' tape if any."""
    tape = None
    for v in operands:
        if v.tape is not None:
            if tape is not None and v.tape is not tape:
                raise UsageError("operands belong to different tapes")
            tape = v.tape
    if tape is None:
        return Var(data)
    parents = tuple(v.index if v.tape is tape else -1 for v in operands)
    return Var(data, tape, tape.push(kind, parents, vjp))


class Var:
    __slots__ = ("data", "tape", "index")
    __array_ufunc__ = None

    def __init__(self, data, tape: Tape | None = None, index: int = -1):
        self.data = data
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        where = f"node {self.index}" if self.tape is not None else "const"
        return f"Var({where}, shape={self.data.shape})"

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_var(other)
        sa, sb = self.shape, other.shape
        return record("add", self.data + other.data, (self, other),
                      lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_var(other)
        sa, sb = self.shape, other.shape
        return record("sub", self.data - other.data, (self, other),
                      lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    def __rsub__(self, other):
        return as_var(other) - self

    def __neg__(self):
        return record("neg", -self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = as_var(other)
        a, b = self.data, other.data
        return record("mul", a * b, (self, other),
                      lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_var(other)
        if np.any(other.data == 0):
            raise NumericError("division by zero")
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return as_var(other) * reciprocal(self)

    def __pow__(self, k):
        if k != 2:
            raise UsageError("only squaring is supported")
        return self * self

    def __matmul__(self, other):
        return matmul(self, as_var(other))

    def __getitem__(self, idx):
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape, dtype=g.dtype)
            if _has_advanced(idx):
                np.add.at(out, idx, g)
            else:
                out[idx] = g
            return (out,)

        return record("getitem", self.data[idx], (self,), vjp)

    # -- reductions and shape ops -------------------------------------------
    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return record("sum", self.data.sum(axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape):
        old = self.shape
        return record("reshape", self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return record("transpose", self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))


def _has_advanced(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def matmul(a: Var, b: Var) -> Var:
    """``a @ b`` for ``a`` of shape (..., k) and a 2-D ``b``."""
    if b.ndim != 2:
        raise UsageError("matmul right operand must be 2-D")
    A, B = a.data, b.data

    def vjp(g):
        ga = g @ B.T
        gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return record("matmul", A @ B, (a, b), vjp)


def _elementwise(kind, fn, dfn):
    def op(x):
        x = as_var(x)
        out = fn(x.data)
        return record(kind, out, (x,), lambda g: (g * dfn(x.data, out),))

    op.__name__ = kind
    return op


tanh = _elementwise("tanh", np.tanh, lambda x, y: 1.0 - y * y)
sin = _elementwise("sin", np.sin, lambda x, y: np.cos(x))
cos = _elementwise("cos", np.cos, lambda x, y: -np.sin(x))
exp = _elementwise("exp", np.exp, lambda x, y: y)


def reciprocal(x) -> Var:
    x = as_var(x)
    if np.any(x.data == 0):
        raise NumericError("division by zero")
    out = 1.0 / x.data
    return record("reciprocal", out, (x,), lambda g: (-g * out * out,))


def concatenate(vars_: Sequence[Var], axis: int) -> Var:
    vars_ = [as_var(v) for v in vars_]
    sizes = np.cumsum([v.shape[axis] for v in vars_])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return record("concatenate", np.concatenate([v.data for v in vars_], axis=axis), vars_, vjp)


def stack(vars_: Sequence[Var], axis: int) -> Var:
    vars_ = [as_var(v) for v in vars_]

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return record("stack", np.stack([v.data for v in vars_], axis=axis), vars_, vjp)


def backward(loss: Var, tape: Tape) -> np.ndarray:
    """Gradient of the scalar ``loss`` with respect to every parameter slot on ``tape``."""
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise UsageError("loss is not a node on this tape")
    if loss.data.size != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss")
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    for i in range(loss.index, -1, -1):
        g = grads.pop(i, None)
        if g is None:
            continue
        node = tape.nodes[i]
        if node.kind == "param":
            leaf_grads[i] = g
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            if p < 0 or gp is None:
                continue
            if p in grads:
                grads[p] = grads[p] + gp
            else:
                grads[p] = gp
    out = np.zeros(tape.param_slots)
    for idx, offset, shape in tape._param_leaves:
        size = int(np.prod(shape))
        if idx in leaf_grads:
            out[offset:offset + size] = np.real(leaf_grads[idx]).reshape(-1)
    return out
