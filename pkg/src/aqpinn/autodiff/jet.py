"""Truncated multivariate Taylor jets in the inputs (x, y, t).

A jet stores the Taylor coefficients ``c[alpha]`` of a field around the
evaluation point for every multi-index ``alpha`` in a downward-closed set (a
:class:`JetSpace`).  Derivatives are ``alpha! * c[alpha]``; a mixed partial is
one stored coefficient, so symmetry of mixed derivatives is exact.

Coefficients are held in a single tape :class:`Var` of shape
``(n_terms, *shape)``, so every jet operation is also recorded for reverse
accumulation with respect to the trainable parameters.
"""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from ..errors import DataError, NumericError, UsageError
from . import tape as T
from .tape import Var, as_var, record

N_INPUTS = 3
X, Y, TIME = 0, 1, 2


def unit(var: int) -> tuple[int, int, int]:
    return tuple(1 if i == var else 0 for i in range(N_INPUTS))


class JetSpace:
    """A downward-closed set of multi-indices with its multiplication table."""

    def __init__(self, indices: Iterable[Sequence[int]]):
        idx = {tuple(int(k) for k in a) for a in indices}
        idx.add((0, 0, 0))
        for a in idx:
            for i in range(N_INPUTS):
                if a[i] and tuple(a[j] - (j == i) for j in range(N_INPUTS)) not in idx:
                    raise UsageError(f"multi-index set is not downward closed at {a}")
        self.indices = tuple(sorted(idx, key=lambda a: (sum(a), tuple(-k for k in a))))
        self.pos = {a: i for i, a in enumerate(self.indices)}
        self.order = max(sum(a) for a in self.indices)
        self.factorial = np.array([math.prod(math.factorial(k) for k in a) for a in self.indices], dtype=float)
        pairs = []
        for (i, a), (j, b) in product(enumerate(self.indices), repeat=2):
            g = tuple(p + q for p, q in zip(a, b))
            if g in self.pos:
                pairs.append((self.pos[g], i, j))
        self.pairs = tuple(pairs)
        self.pairs_no_const = tuple(p for p in pairs if p[1] and p[2])

    def __len__(self):
        return len(self.indices)

    def __repr__(self):
        return f"JetSpace(order={self.order}, terms={len(self)})"

    def __contains__(self, alpha):
        return tuple(alpha) in self.pos

    @staticmethod
    @lru_cache(maxsize=None)
    def of(indices: frozenset) -> "JetSpace":
        return JetSpace(indices)

    @staticmethod
    def full(order: int) -> "JetSpace":
        return JetSpace.of(frozenset(a for a in product(range(order + 1), repeat=N_INPUTS) if sum(a) <= order))

    def shifted(self, var: int) -> "JetSpace":
        """Space of d/d(var) of a jet over this space."""
        e = unit(var)
        return JetSpace.of(frozenset(a for a in self.indices if tuple(p + q for p, q in zip(a, e)) in self.pos))


#: value, gradient and Hessian in (x, y, t)
ORDER2 = JetSpace.full(2)
#: what a velocity head needs for the momentum residuals
VELOCITY_SPACE = JetSpace.of(frozenset({(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (0, 2, 0)}))
#: what a streamfunction head needs: u = psi_y and v = -psi_x carry VELOCITY_SPACE
STREAM_SPACE = JetSpace.of(frozenset(
    {(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (1, 1, 0), (0, 2, 0), (1, 0, 1), (0, 1, 1),
     (3, 0, 0), (2, 1, 0), (1, 2, 0), (0, 3, 0)}))


def _jet_mul(a: Var, b: Var, space: JetSpace, skip_const: bool = False) -> Var:
    A, B = a.data, b.data
    n = len(space)
    shape = np.broadcast_shapes(A.shape[1:], B.shape[1:])
    out = np.zeros((n,) + shape, dtype=np.result_type(A, B))
    pairs = space.pairs_no_const if skip_const else space.pairs
    for g, i, j in pairs:
        out[g] += A[i] * B[j]

    def vjp(G):
        gA = np.zeros((n,) + shape, dtype=G.dtype)
        gB = np.zeros((n,) + shape, dtype=G.dtype)
        for g, i, j in pairs:
            gA[i] += G[g] * B[j]
            gB[j] += G[g] * A[i]
        return T._unbroadcast(gA, A.shape), T._unbroadcast(gB, B.shape)

    return record("jet_mul", out, (a, b), vjp)


def _add_value(coef: Var, v: Var) -> Var:
    shape = np.broadcast_shapes(coef.shape[1:], v.shape)
    out = np.array(np.broadcast_to(coef.data, coef.shape[:1] + shape), dtype=np.result_type(coef.data, v.data))
    out[0] += v.data
    cs, vs = coef.shape, v.shape
    return record("add_value", out, (coef, v), lambda g: (T._unbroadcast(g, cs), T._unbroadcast(g[0], vs)))


def _drop_value(coef: Var) -> Var:
    out = coef.data.copy()
    out[0] = 0.0

    def vjp(g):
        g = g.copy()
        g[0] = 0.0
        return (g,)

    return record("drop_value", out, (coef,), vjp)


def _embed_value(v: Var, n: int) -> Var:
    out = np.zeros((n,) + v.shape, dtype=v.data.dtype)
    out[0] = v.data
    return record("embed_value", out, (v,), lambda g: (g[0],))


def _axis(axis, ndim):
    if axis is None:
        return None
    return axis + 1 if axis >= 0 else axis


class Jet:
    """Field of shape ``shape`` with Taylor coefficients over ``space``."""

    __slots__ = ("space", "coef")
    __array_ufunc__ = None

    def __init__(self, space: JetSpace, coef):
        self.space = space
        self.coef = as_var(coef)
        if self.coef.shape[0] != len(space):
            raise UsageError(f"coefficient axis {self.coef.shape[0]} != space size {len(space)}")

    @classmethod
    def constant(cls, space: JetSpace, value) -> "Jet":
        return cls(space, _embed_value(as_var(value), len(space)))

    # -- inspection -------------------------------------------------------
    @property
    def shape(self):
        return self.coef.shape[1:]

    @property
    def ndim(self):
        return self.coef.ndim - 1

    @property
    def value(self) -> np.ndarray:
        return self.coef.data[0]

    @property
    def val(self) -> Var:
        return self.coef[0]

    @property
    def tape_node(self):
        return self.coef.index if self.coef.tape is not None else None

    def d(self, alpha: Sequence[int]) -> Var:
        """Partial derivative ``alpha`` as a (tape-tracked) field."""
        alpha = tuple(alpha)
        if alpha not in self.space.pos:
            raise UsageError(f"derivative {alpha} is not carried by {self.space}")
        i = self.space.pos[alpha]
        c = self.coef[i]
        f = self.space.factorial[i]
        return c if f == 1.0 else c * f

    def deriv(self, alpha: Sequence[int]) -> np.ndarray:
        alpha = tuple(alpha)
        i = self.space.pos[alpha]
        return self.coef.data[i] * self.space.factorial[i]

    @property
    def grad_in(self) -> np.ndarray:
        return np.stack([self.deriv(unit(v)) for v in range(N_INPUTS)], axis=-1)

    @property
    def hess_in(self) -> np.ndarray:
        rows = []
        for i in range(N_INPUTS):
            rows.append(np.stack([self.deriv(tuple(p + q for p, q in zip(unit(i), unit(j))))
                                  for j in range(N_INPUTS)], axis=-1))
        return np.stack(rows, axis=-2)

    def partial(self, var: int) -> "Jet":
        """The jet of d/d(var), over the correspondingly shifted space."""
        target = self.space.shifted(var)
        e = unit(var)
        src = [self.space.pos[tuple(p + q for p, q in zip(a, e))] for a in target.indices]
        w = np.array([a[var] + 1.0 for a in target.indices]).reshape((-1,) + (1,) * self.ndim)
        return Jet(target, self.coef[src] * w)

    def __repr__(self):
        return f"Jet({self.space!r}, shape={self.shape})"

    # -- arithmetic -------------------------------------------------------
    def _same(self, other: "Jet"):
        if other.space is not self.space:
            raise UsageError("jets over different spaces")

    def __add__(self, other):
        if isinstance(other, Jet):
            self._same(other)
            return Jet(self.space, self.coef + other.coef)
        return Jet(self.space, _add_value(self.coef, as_var(other)))

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.coef)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            self._same(other)
            return Jet(self.space, _jet_mul(self.coef, other.coef, self.space))
        other = as_var(other)
        return Jet(self.space, self.coef * other.reshape((1,) + other.shape))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * reciprocal(other)
        other = as_var(other)
        if np.any(other.data == 0):
            raise NumericError("division by zero")
        return self * T.reciprocal(other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, k):
        if k != 2:
            raise UsageError("only squaring is supported")
        return square(self)

    def __matmul__(self, w):
        """Right-multiply the trailing axis by a 2-D matrix (linear in every coefficient)."""
        return Jet(self.space, self.coef @ as_var(w))

    # -- shape ops ----------------------------------------------------------
    def __getitem__(self, idx):
        idx = idx if isinstance(idx, tuple) else (idx,)
        return Jet(self.space, self.coef[(slice(None),) + idx])

    def sum(self, axis=None, keepdims=False):
        if axis is None:
            axis = tuple(range(1, self.coef.ndim))
            return Jet(self.space, self.coef.sum(axis=axis, keepdims=keepdims))
        return Jet(self.space, self.coef.sum(axis=_axis(axis, self.ndim), keepdims=keepdims))

    def mean(self, axis=None):
        n = int(np.prod(self.shape)) if axis is None else self.shape[axis]
        return self.sum(axis) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Jet(self.space, self.coef.reshape((len(self.space),) + tuple(shape)))


def concatenate(jets: Sequence[Jet], axis: int) -> Jet:
    space = jets[0].space
    return Jet(space, T.concatenate([j.coef for j in jets], _axis(axis, jets[0].ndim)))


def stack(jets: Sequence[Jet], axis: int) -> Jet:
    space = jets[0].space
    return Jet(space, T.stack([j.coef for j in jets], _axis(axis, jets[0].ndim)))


# -- nonlinear functions by Taylor composition ---------------------------------

def _compose(u: Jet, derivs: Sequence[Var]) -> Jet:
    """f(u) = sum_k f^(k)(u0)/k! * (u - u0)^k, truncated to the space."""
    space = u.space
    out = Jet.constant(space, derivs[0])
    if space.order == 0:
        return out
    delta = _drop_value(u.coef)
    power = delta
    for k in range(1, space.order + 1):
        scale = derivs[k] if k == 1 else derivs[k] * (1.0 / math.factorial(k))
        out = Jet(space, out.coef + power * scale.reshape((1,) + scale.shape))
        if k < space.order:
            power = _jet_mul(power, delta, space, skip_const=True)
    return out


def _check_order(u: Jet, limit=3):
    if u.space.order > limit:
        raise UsageError(f"nonlinear jet functions support order <= {limit}")


def _tanh_derivs(v: Var, order):
    t = T.tanh(v)
    s = 1.0 - t * t
    out = [t, s]
    if order >= 2:
        out.append(-2.0 * t * s)
    if order >= 3:
        out.append(s * (6.0 * t * t - 2.0))
    return out


def _sin_derivs(v: Var, order):
    s, c = T.sin(v), T.cos(v)
    return [s, c, -s, -c][: order + 1]


def _cos_derivs(v: Var, order):
    s, c = T.sin(v), T.cos(v)
    return [c, -s, -c, s][: order + 1]


def _exp_derivs(v: Var, order):
    e = T.exp(v)
    return [e] * (order + 1)


def _recip_derivs(v: Var, order):
    r = T.reciprocal(v)
    out, p = [r], r
    for k in range(1, order + 1):
        p = p * r
        out.append(p * float((-1) ** k * math.factorial(k)))
    return out


def _unary(name, derivs_fn, np_fn):
    def fn(x):
        if isinstance(x, Jet):
            _check_order(x)
            return _compose(x, derivs_fn(x.val, x.space.order))
        if isinstance(x, Var):
            return derivs_fn(x, 0)[0]
        return np_fn(x)

    fn.__name__ = name
    return fn


tanh = _unary("tanh", _tanh_derivs, np.tanh)
sin = _unary("sin", _sin_derivs, np.sin)
cos = _unary("cos", _cos_derivs, np.cos)
exp = _unary("exp", _exp_derivs, np.exp)


def reciprocal(x):
    if isinstance(x, Jet):
        if np.any(x.value == 0):
            raise NumericError("division by zero")
        _check_order(x)
        return _compose(x, _recip_derivs(x.val, x.space.order))
    if isinstance(x, Var):
        return T.reciprocal(x)
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise NumericError("division by zero")
    return 1.0 / x


def square(x):
    if isinstance(x, Jet):
        return Jet(x.space, _jet_mul(x.coef, x.coef, x.space))
    return x * x


def value_of(x) -> np.ndarray:
    """Plain array behind a Jet, Var or array."""
    if isinstance(x, Jet):
        return x.value
    if isinstance(x, Var):
        return x.data
    return np.asarray(x)


# -- seeding ------------------------------------------------------------------

def lift_points(points, space: JetSpace = ORDER2) -> Jet:
    """Seed a batch of (x, y, t) rows: shape (..., 3) jet with unit first derivatives."""
    points = np.asarray(points, dtype=float)
    if points.shape[-1] != N_INPUTS:
        raise UsageError(f"points need {N_INPUTS} columns, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise DataError("non-finite input point")
    coef = np.zeros((len(space),) + points.shape)
    coef[0] = points
    for v in range(N_INPUTS):
        if unit(v) in space.pos:
            coef[space.pos[unit(v)], ..., v] = 1.0
    return Jet(space, coef)


def lift_input(x: float, y: float, t: float, space: JetSpace = ORDER2) -> tuple[Jet, Jet, Jet]:
    """Three seeded scalars with unit first derivatives and zero Hessians."""
    p = lift_points(np.array([x, y, t], dtype=float), space)
    return p[0], p[1], p[2]


#: the scalar specialization of a jet used throughout the public API
ADScalar = Jet
