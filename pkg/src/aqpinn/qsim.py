"""Exact statevector simulation of small qubit registers.

Qubit 0 is the least-significant bit of the basis index, so the amplitude of
basis state ``b`` lives at ``amplitudes[b]`` and qubit ``q`` reads
``(b >> q) & 1``.  Only RY, RZ and CNOT are supported; that is all the
tensor-network ansatze need.

Array-level helpers (``apply_gate_array``, ``expectations``, ``circuit_unitary``)
accept any number of leading batch axes so many states can be pushed through a
circuit at once.  The ``Statevector`` wrapper is the value-like single-state API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, UsageError

MAX_QUBITS = 12
NORM_TOL = 1e-12


class GateKind(str, Enum):
    RY = "RY"
    RZ = "RZ"
    CNOT = "CNOT"


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    targets: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.kind is GateKind.CNOT:
            if len(self.targets) != 2 or self.targets[0] == self.targets[1]:
                raise UsageError(f"CNOT needs distinct (control, target), got {self.targets}")
        else:
            if len(self.targets) != 1:
                raise UsageError(f"{self.kind.value} is single-target, got {self.targets}")
            if self.angle is None:
                raise UsageError(f"{self.kind.value} needs an angle")


def ry(qubit: int, angle: float) -> Gate:
    return Gate(GateKind.RY, (qubit,), float(angle))


def rz(qubit: int, angle: float) -> Gate:
    return Gate(GateKind.RZ, (qubit,), float(angle))


def cnot(control: int, target: int) -> Gate:
    return Gate(GateKind.CNOT, (control, target))


@dataclass(frozen=True)
class ObservableZ:
    qubit_index: int


@dataclass(frozen=True)
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise UsageError(
                f"expected {1 << self.n_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def _check_qubits(n_qubits: int) -> None:
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n_qubits!r}")


def _check_target(q: int, n_qubits: int) -> None:
    if not 0 <= q < n_qubits:
        raise UsageError(f"qubit index {q} out of range for {n_qubits} qubits")


def init_state(n_qubits: int) -> Statevector:
    _check_qubits(n_qubits)
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[0] = 1.0
    return Statevector(n_qubits, amps)


def ry_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c, -s], [s, c]])


def rz_matrix(angle: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * angle), 0.0], [0.0, np.exp(0.5j * angle)]])


def gate_matrix(kind: GateKind, angle: float) -> np.ndarray:
    """2x2 matrix of a single-qubit rotation."""
    return ry_matrix(angle) if kind is GateKind.RY else rz_matrix(angle)


def gate_matrix_derivative(kind: GateKind, angle: float) -> np.ndarray:
    """Elementwise d/d(angle) of :func:`gate_matrix`."""
    if kind is GateKind.RY:
        c, s = math.cos(angle / 2), math.sin(angle / 2)
        return 0.5 * np.array([[-s, -c], [c, -s]])
    return np.array([[-0.5j * np.exp(-0.5j * angle), 0.0], [0.0, 0.5j * np.exp(0.5j * angle)]])


def apply_1q_array(amps: np.ndarray, mat: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Apply a 2x2 matrix to ``qubit`` of every state in ``amps`` (last axis)."""
    lead = amps.shape[:-1]
    view = amps.reshape(lead + (1 << (n_qubits - qubit - 1), 2, 1 << qubit))
    a0, a1 = view[..., 0, :], view[..., 1, :]
    dtype = np.result_type(amps, mat)
    out = np.empty(view.shape, dtype=dtype)
    if mat[0, 1] == 0 and mat[1, 0] == 0:
        out[..., 0, :] = mat[0, 0] * a0
        out[..., 1, :] = mat[1, 1] * a1
    else:
        out[..., 0, :] = mat[0, 0] * a0 + mat[0, 1] * a1
        out[..., 1, :] = mat[1, 0] * a0 + mat[1, 1] * a1
    return out.reshape(amps.shape)


def _cnot_permutation(control: int, target: int, n_qubits: int) -> np.ndarray:
    idx = np.arange(1 << n_qubits)
    return np.where((idx >> control) & 1, idx ^ (1 << target), idx)


def apply_gate_array(amps: np.ndarray, gate: Gate, n_qubits: int) -> np.ndarray:
    for q in gate.targets:
        _check_target(q, n_qubits)
    if gate.kind is GateKind.CNOT:
        control, target = gate.targets
        return amps[..., _cnot_permutation(control, target, n_qubits)]
    return apply_1q_array(amps, gate_matrix(gate.kind, gate.angle), gate.targets[0], n_qubits)


def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    amps = apply_gate_array(state.amplitudes, gate, state.n_qubits)
    return Statevector(state.n_qubits, amps.astype(complex, copy=False))


def angle_embed(state: Statevector, features: Sequence[float]) -> Statevector:
    """RY(features[i]) on qubit i, in index order."""
    features = np.asarray(features, dtype=float)
    if features.shape != (state.n_qubits,):
        raise UsageError(f"need {state.n_qubits} features, got shape {features.shape}")
    for q, a in enumerate(features):
        state = apply_gate(state, ry(q, a))
    return state


def z_signs(qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Matrix ``S`` of shape (2**n, len(qubits)) with the Z eigenvalue of each basis state."""
    idx = np.arange(1 << n_qubits)
    return np.stack([1.0 - 2.0 * ((idx >> q) & 1) for q in qubits], axis=-1)


def expect_z(state: Statevector, obs: ObservableZ | int) -> float:
    q = obs.qubit_index if isinstance(obs, ObservableZ) else int(obs)
    _check_target(q, state.n_qubits)
    probs = np.abs(state.amplitudes) ** 2
    return float(probs @ z_signs([q], state.n_qubits)[:, 0])


def _observable_indices(observables, n_qubits: int) -> list[int]:
    qs = [o.qubit_index if isinstance(o, ObservableZ) else int(o) for o in observables]
    for q in qs:
        _check_target(q, n_qubits)
    return qs


def bind_gates(layout, params) -> list[Gate]:
    """Concrete gates of ``layout`` with parameter slots filled from ``params``."""
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.shape[0] != layout.param_count:
        raise UsageError(f"layout needs {layout.param_count} params, got {params.shape[0]}")
    gates = []
    for slot in layout.gates:
        if slot.kind is GateKind.CNOT:
            gates.append(Gate(slot.kind, slot.targets))
        else:
            angle = params[slot.param_index] if slot.param_index is not None else slot.angle
            gates.append(Gate(slot.kind, slot.targets, float(angle)))
    return gates


def embed_product_states(features: np.ndarray) -> np.ndarray:
    """RY-embedded |0..0> for each feature row; shape (..., 2**n), real."""
    features = np.asarray(features, dtype=float)
    n = features.shape[-1]
    c, s = np.cos(features / 2), np.sin(features / 2)
    state = np.stack([c[..., 0], s[..., 0]], axis=-1)
    for q in range(1, n):
        amp = np.stack([c[..., q], s[..., q]], axis=-1)
        state = (amp[..., :, None] * state[..., None, :]).reshape(features.shape[:-1] + (1 << (q + 1),))
    return state


def circuit_unitary(layout, params) -> np.ndarray:
    """Matrix ``U`` of the bound layout (no embedding) with ``psi_out = U @ psi_in``.

    Real-valued whenever the layout has no RZ gates.
    """
    n = layout.n_qubits
    rows = np.eye(1 << n)
    for gate in bind_gates(layout, params):
        rows = apply_gate_array(rows, gate, n)
    return rows.T


def circuit_unitary_derivative(layout, params, slot: int) -> np.ndarray:
    """dU/d(params[slot]) by differentiating the one gate bound to ``slot``."""
    n = layout.n_qubits
    rows = np.eye(1 << n)
    for gslot, gate in zip(layout.gates, bind_gates(layout, params)):
        if gslot.param_index == slot:
            rows = apply_1q_array(rows, gate_matrix_derivative(gate.kind, gate.angle), gate.targets[0], n)
        else:
            rows = apply_gate_array(rows, gate, n)
    return rows.T


def expectations(features, layout, params, observables) -> np.ndarray:
    """Batched ``run_circuit``: features of shape (..., n) -> (..., n_obs)."""
    features = np.asarray(features, dtype=float)
    n = layout.n_qubits
    if features.shape[-1] != n:
        raise UsageError(f"features width {features.shape[-1]} != n_qubits {n}")
    qs = _observable_indices(observables, n)
    psi = embed_product_states(features) @ circuit_unitary(layout, params).T
    return (np.abs(psi) ** 2) @ z_signs(qs, n)


def run_circuit(features, layout, params, observables) -> np.ndarray:
    """init -> angle_embed(features) -> bound layout gates -> <Z> per observable."""
    features = np.asarray(features, dtype=float)
    if features.shape != (layout.n_qubits,):
        raise UsageError(f"need {layout.n_qubits} features, got shape {features.shape}")
    state = angle_embed(init_state(layout.n_qubits), features)
    for gate in bind_gates(layout, params):
        state = apply_gate(state, gate)
    qs = _observable_indices(observables, layout.n_qubits)
    return np.array([expect_z(state, q) for q in qs])
