"""Quantum multi-head self-attention and the classical baseline it is compared to.

Both forward passes are written against a small duck-typed surface (indexing,
broadcasting arithmetic, ``sum``, ``reshape``) so the same code evaluates plain
numpy arrays and input jets carrying derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ansatz import CircuitLayout
from .autodiff import jet as J
from .autodiff.quantum import circuit_expect_ad
from .errors import ConfigurationError, UsageError


@dataclass
class QmsaHead:
    layout_K: CircuitLayout
    layout_Q: CircuitLayout
    layout_V: CircuitLayout
    theta_K: object
    theta_Q: object
    theta_V: object

    def __post_init__(self):
        n = self.layout_K.n_qubits
        if self.layout_Q.n_qubits != n or self.layout_V.n_qubits != n:
            raise ConfigurationError("K, Q and V layouts must share n_qubits")
        for name in "KQV":
            layout, theta = getattr(self, f"layout_{name}"), getattr(self, f"theta_{name}")
            if int(np.size(J.value_of(theta))) != layout.param_count:
                raise ConfigurationError(
                    f"theta_{name} has {np.size(J.value_of(theta))} entries, layout needs {layout.param_count}")

    @property
    def d_h(self) -> int:
        return self.layout_K.n_qubits

    @property
    def param_count(self) -> int:
        return self.layout_K.param_count + self.layout_Q.param_count + self.layout_V.param_count


def _width(x):
    return J.value_of(x).shape[-1]


def head_scalars(tokens, head: QmsaHead, gradient="shift"):
    """K_i, Q_i from <Z_0> and V_ij from <Z_j>, one circuit run per token and role."""
    if _width(tokens) != head.d_h:
        raise UsageError(f"token width {_width(tokens)} != head n_qubits {head.d_h}")
    K = circuit_expect_ad(tokens, head.layout_K, head.theta_K, [0], gradient)[..., 0]
    Q = circuit_expect_ad(tokens, head.layout_Q, head.theta_Q, [0], gradient)[..., 0]
    V = circuit_expect_ad(tokens, head.layout_V, head.theta_V, list(range(head.d_h)), gradient)
    return K, Q, V


def canonical_key_order(K, V):
    """Sort keys (K_j together with their value rows V_j) by K, then by V.

    The attention output does not depend on the key order mathematically, but
    floating-point sums over keys do.  Summing in an order fixed by the key
    contents makes permutation equivariance hold bit for bit.
    """
    k, v = J.value_of(K), J.value_of(V)
    lead, n = k.shape[:-1], k.shape[-1]
    cols = [v[..., j] for j in reversed(range(v.shape[-1]))] + [k]
    flat = [c.reshape(-1, n) for c in cols]
    order = np.stack([np.lexsort([c[r] for c in flat]) for r in range(flat[0].shape[0])]).reshape(lead + (n,))
    ix = tuple(a[..., None] for a in np.indices(lead, sparse=True)) + (order,)
    return K[ix], V[ix]


def attention_scores(Q, K):
    """A_ij = -(Q_i - K_j)**2."""
    if J.value_of(Q).shape != J.value_of(K).shape:
        raise UsageError(f"Q and K shapes differ: {J.value_of(Q).shape} vs {J.value_of(K).shape}")
    diff = Q[..., :, None] - K[..., None, :]
    return -J.square(diff)


def softmax(a, axis=-1):
    shifted = a - J.value_of(a).max(axis=axis, keepdims=True)
    e = J.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def attention_mix(A, V, d_h: int):
    """SoftMax(A / sqrt(d_h)) @ V with the softmax taken along rows."""
    a_shape, v_shape = J.value_of(A).shape, J.value_of(V).shape
    if d_h < 1:
        raise UsageError(f"d_h must be >= 1, got {d_h}")
    if a_shape[-1] != a_shape[-2] or v_shape[-2] != a_shape[-1]:
        raise UsageError(f"attention matrix {a_shape} incompatible with values {v_shape}")
    P = softmax(A * (1.0 / math.sqrt(d_h)))
    return (P[..., :, :, None] * V[..., None, :, :]).sum(axis=-2)


def qmsa_forward(tokens, heads: Sequence[QmsaHead], gradient="shift"):
    """Per head: circuits -> scores -> mix; head outputs concatenated on the feature axis."""
    if not heads:
        raise ConfigurationError("qmsa_forward needs at least one head")
    outs = []
    for head in heads:
        K, Q, V = head_scalars(tokens, head, gradient)
        K, V = canonical_key_order(K, V)
        outs.append(attention_mix(attention_scores(Q, K), V, head.d_h))
    if len(outs) == 1:
        return outs[0]
    if isinstance(outs[0], J.Jet):
        return J.concatenate(outs, axis=-1)
    return np.concatenate(outs, axis=-1)


def qmsa_param_count(heads: Sequence[QmsaHead]) -> int:
    return sum(h.param_count for h in heads)


def classical_msa_param_count(embed_dim: int, n_heads: int) -> int:
    """Q, K, V and output projections, each embed_dim x embed_dim with bias."""
    if n_heads < 1 or embed_dim < 1 or embed_dim % n_heads:
        raise ConfigurationError(f"embed_dim {embed_dim} not divisible by n_heads {n_heads}")
    return 4 * embed_dim * (embed_dim + 1)


@dataclass
class ClassicalMsaParams:
    n_heads: int
    wq: object
    bq: object
    wk: object
    bk: object
    wv: object
    bv: object
    wo: object
    bo: object

    @property
    def embed_dim(self) -> int:
        return J.value_of(self.wq).shape[0]

    @classmethod
    def from_flat(cls, flat, embed_dim, n_heads):
        """Unpack 4 * (W, b) blocks in q, k, v, o order from a flat vector (array or Var)."""
        classical_msa_param_count(embed_dim, n_heads)
        E = embed_dim
        parts, off = [], 0
        for _ in range(4):
            parts.append(flat[off:off + E * E].reshape(E, E))
            parts.append(flat[off + E * E:off + E * E + E])
            off += E * E + E
        return cls(n_heads, *parts)


def classical_msa_forward(tokens, params: ClassicalMsaParams):
    """Scaled dot-product multi-head self-attention over tokens of shape (..., n, E)."""
    E, H = params.embed_dim, params.n_heads
    shape = J.value_of(tokens).shape
    if shape[-1] != E:
        raise UsageError(f"token width {shape[-1]} != embed_dim {E}")
    dh = E // H
    lead = shape[:-1]
    split = lead + (H, dh)
    Q = (tokens @ params.wq + params.bq).reshape(split)
    K = (tokens @ params.wk + params.bk).reshape(split)
    V = (tokens @ params.wv + params.bv).reshape(split)
    scores = (Q[..., :, None, :, :] * K[..., None, :, :, :]).sum(axis=-1) * (1.0 / math.sqrt(dh))
    P = softmax(scores, axis=-2)  # (..., i, j, h), normalized over keys j
    mixed = (P[..., :, :, :, None] * V[..., None, :, :, :]).sum(axis=-3)
    return mixed.reshape(lead + (E,)) @ params.wo + params.bo
