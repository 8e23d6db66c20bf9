"""Circuit expectations as differentiable primitives.

Input derivatives come from pushing the jet of the RY-embedded product state
through the (input-independent) circuit unitary.  Parameter partials enter the
tape through the parameter-shift identity

    dF/dtheta_k = [F(theta + pi/2 e_k) - F(theta - pi/2 e_k)] / 2,

applied to the cotangent-weighted sum of expectations ``F``.  That sum is
``sum_m tr(R_m(theta) rho_m)`` with ``R_m = Re(U^dag Z_m U)`` and ``rho_m`` the
cotangent-weighted outer products of the embedded-state coefficients, so every
shifted evaluation costs one unitary rather than a pass over the batch.
``gradient="direct"`` differentiates the gate matrices instead and is kept as
an independent check.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..errors import UsageError
from ..qsim import ObservableZ, circuit_unitary, circuit_unitary_derivative, expectations, z_signs
from . import jet as J
from .jet import Jet
from .tape import Var, as_var, record

SHIFT = math.pi / 2


def _qubits(observables, n):
    qs = [o.qubit_index if isinstance(o, ObservableZ) else int(o) for o in observables]
    if any(not 0 <= q < n for q in qs):
        raise UsageError(f"observable qubit out of range for {n} qubits: {qs}")
    return qs


def _observable_matrices(U: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """R_m = Re(U^dag Z_m U) for every observable column of ``signs``; shape (m, D, D)."""
    return np.real(np.einsum("ba,bm,bc->mac", U.conj(), signs, U, optimize=True))


def _unitary(layout, theta) -> np.ndarray:
    return _cached_unitary(layout, np.asarray(theta, dtype=float).tobytes())


@lru_cache(maxsize=64)
def _cached_unitary(layout, key: bytes) -> np.ndarray:
    U = circuit_unitary(layout, np.frombuffer(key, dtype=float))
    U = U.real.copy() if not np.any(U.imag) else U
    U.flags.writeable = False
    return U


def _trace_z(A: np.ndarray, U: np.ndarray, rho: np.ndarray, signs: np.ndarray) -> float:
    """sum_m Re tr(U^dag Z_m A rho_m), using only D x D matrix products."""
    diag = np.einsum("mbc,bc->mb", A @ rho, U.conj())
    return float(np.sum(np.real(diag) * signs.T))


def _rho(X: np.ndarray, G: np.ndarray, pairs) -> np.ndarray:
    """rho_m = sum over rows and coefficient pairs of G[g, row, m] x_i x_j^T."""
    n, D = X.shape[0], X.shape[-1]
    m = G.shape[-1]
    Xr = X.reshape(n, -1, D)
    Gr = G.reshape(n, -1, m)
    V = np.zeros((n,) + Xr.shape[1:2] + (m, D))
    for g, i, j in pairs:
        V[i] += Gr[g][:, :, None] * Xr[j][:, None, :]
    flat = Xr.reshape(-1, D).T @ V.reshape(-1, m * D)
    return flat.reshape(D, m, D).transpose(1, 0, 2)


def _shift_gradient(layout, theta, signs, rho) -> np.ndarray:
    def phi(th):
        U = _unitary(layout, th)
        return _trace_z(U, U, rho, signs)

    grad = np.zeros(theta.shape[0])
    for k in range(theta.shape[0]):
        plus, minus = theta.copy(), theta.copy()
        plus[k] += SHIFT
        minus[k] -= SHIFT
        grad[k] = 0.5 * (phi(plus) - phi(minus))
    return grad


def _direct_gradient(layout, theta, signs, U, rho) -> np.ndarray:
    grad = np.zeros(theta.shape[0])
    for k in range(theta.shape[0]):
        dU = circuit_unitary_derivative(layout, theta, k)
        # tr(dR_m rho_m) = 2 Re tr(U^dag Z_m dU rho_m) for symmetric rho_m
        grad[k] = 2.0 * _trace_z(dU, U, rho, signs)
    return grad


def expectation_from_state(state: Var, theta, layout, qubits, space, gradient="shift") -> Var:
    """Jet coefficients of <Z_m> after ``layout`` acts on an embedded state jet.

    ``state`` holds real coefficients of shape (n_terms, ..., 2**n); the result
    has shape (n_terms, ..., len(qubits)).
    """
    if gradient not in ("shift", "direct"):
        raise UsageError(f"gradient must be 'shift' or 'direct', got {gradient!r}")
    theta = as_var(theta)
    th = np.asarray(theta.data, dtype=float).reshape(-1)
    if th.shape[0] != layout.param_count:
        raise UsageError(f"layout needs {layout.param_count} params, got {th.shape[0]}")
    X = state.data
    U = _unitary(layout, th)
    S = z_signs(qubits, layout.n_qubits)
    Y = X @ U.T
    out = np.zeros(X.shape[:-1] + (len(qubits),))
    for g, i, j in space.pairs:
        if i < j:
            continue
        prod = np.real(Y[i] * Y[j].conj()) @ S
        out[g] += prod if i == j else 2.0 * prod

    def vjp(G):
        W = np.zeros(Y.shape, dtype=Y.dtype)
        GS = G @ S.T
        for g, i, j in space.pairs:
            W[i] += GS[g] * Y[j]
        gx = 2.0 * np.real(W @ U.conj())
        if theta.tape is None:
            return gx, None
        rho = _rho(X, G, space.pairs)
        if gradient == "shift":
            gth = _shift_gradient(layout, th, S, rho)
        else:
            gth = _direct_gradient(layout, th, S, U, rho)
        return gx, gth.reshape(theta.shape)

    return record("circuit_expect", out, (state, theta), vjp)


def embed_state_jet(features: Jet) -> Jet:
    """Jet of the RY-embedded product state; features (..., n) -> state (..., 2**n)."""
    half = features * 0.5
    c, s = J.cos(half), J.sin(half)
    lead = features.shape[:-1]
    state = J.stack([c[..., 0], s[..., 0]], axis=-1)
    for q in range(1, features.shape[-1]):
        amp = J.stack([c[..., q], s[..., q]], axis=-1)
        state = (amp[..., :, None] * state[..., None, :]).reshape(lead + (1 << (q + 1),))
    return state


def circuit_expect_ad(features, layout, params, observables, gradient="shift"):
    """<Z> per observable with input derivatives carried as jets.

    ``features`` is either a Jet whose last axis has length ``n_qubits`` (result:
    Jet with last axis ``len(observables)``) or a sequence of ``n_qubits``
    scalar jets (result: list of scalar jets).  Plain arrays fall through to
    :func:`aqpinn.qsim.expectations`.
    """
    as_list = isinstance(features, (list, tuple))
    if as_list:
        features = J.stack(list(features), axis=-1)
    if not isinstance(features, Jet):
        return expectations(features, layout, np.asarray(J.value_of(params)), observables)
    n = layout.n_qubits
    if features.shape[-1] != n:
        raise UsageError(f"features width {features.shape[-1]} != n_qubits {n}")
    qs = _qubits(observables, n)
    state = embed_state_jet(features)
    coef = expectation_from_state(state.coef, params, layout, qs, features.space, gradient)
    out = Jet(features.space, coef)
    if as_list:
        return [out[..., k] for k in range(len(qs))]
    return out


def parameter_shift_jacobian(features, layout, params, observables) -> np.ndarray:
    """d<Z_m>/dtheta_k by the two-term shift rule; shape (..., n_obs, n_params)."""
    params = np.asarray(params, dtype=float)
    cols = []
    for k in range(params.shape[0]):
        plus, minus = params.copy(), params.copy()
        plus[k] += SHIFT
        minus[k] -= SHIFT
        cols.append(0.5 * (expectations(features, layout, plus, observables)
                           - expectations(features, layout, minus, observables)))
    return np.stack(cols, axis=-1)
