"""Tensor-network circuit topologies built from {RY, RY, CNOT} blocks.

Every parameterized gate owns a fresh slot; slots are numbered in gate order,
which is also the order in which a flat parameter vector is bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import ConfigurationError
from .qsim import MAX_QUBITS, GateKind


class Topology(str, Enum):
    QMPS = "qmps"
    QTTN = "qttn"
    QMERA = "qmera"


@dataclass(frozen=True)
class GateSlot:
    kind: GateKind
    targets: tuple[int, ...]
    param_index: int | None = None
    angle: float | None = None


@dataclass(frozen=True)
class CircuitLayout:
    n_qubits: int
    gates: tuple[GateSlot, ...] = ()
    topology: Topology | None = None

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        slots = [g.param_index for g in self.gates if g.param_index is not None]
        if sorted(slots) != list(range(len(slots))):
            raise ConfigurationError(f"parameter slots must be exactly 0..{len(slots) - 1}")
        for g in self.gates:
            if any(not 0 <= t < self.n_qubits for t in g.targets):
                raise ConfigurationError(f"gate {g} targets outside {self.n_qubits} qubits")
            if g.kind is not GateKind.CNOT and g.param_index is None and g.angle is None:
                raise ConfigurationError(f"rotation {g} has neither slot nor fixed angle")

    @property
    def param_count(self) -> int:
        return sum(1 for g in self.gates if g.param_index is not None)

    def blocks(self) -> list[tuple[int, int]]:
        """(control, target) of every CNOT, i.e. one entry per two-qubit block."""
        return [g.targets for g in self.gates if g.kind is GateKind.CNOT]

    def summary(self) -> str:
        name = self.topology.value.upper() if self.topology else "custom"
        lines = [f"topology={name} n_qubits={self.n_qubits} param_count={self.param_count}"]
        for g in self.gates:
            if g.kind is GateKind.CNOT:
                lines.append(f"  CNOT {g.targets[0]}->{g.targets[1]}")
            elif g.param_index is not None:
                lines.append(f"  {g.kind.value} q{g.targets[0]} theta[{g.param_index}]")
            else:
                lines.append(f"  {g.kind.value} q{g.targets[0]} {g.angle!r}")
        return "\n".join(lines)


class _Builder:
    def __init__(self, n_qubits):
        self.n = n_qubits
        self.gates: list[GateSlot] = []
        self.next_slot = 0

    def rot(self, q, kind=GateKind.RY):
        self.gates.append(GateSlot(kind, (q,), self.next_slot))
        self.next_slot += 1

    def block(self, a, b):
        """RY(a), RY(b), CNOT(a -> b)."""
        self.rot(a)
        self.rot(b)
        self.gates.append(GateSlot(GateKind.CNOT, (a, b)))

    def build(self, topology):
        return CircuitLayout(self.n, tuple(self.gates), topology)


def _power_of_two_levels(n_qubits, minimum):
    if not isinstance(n_qubits, int) or n_qubits < minimum or n_qubits > MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be an integer in {minimum}..{MAX_QUBITS}, got {n_qubits!r}")
    if n_qubits & (n_qubits - 1):
        raise ConfigurationError(f"n_qubits must be a power of 2, got {n_qubits}")
    return n_qubits.bit_length() - 1


def build_qmps(n_qubits: int, n_layers: int = 1) -> CircuitLayout:
    if not isinstance(n_qubits, int) or not 2 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"QMPS needs 2..{MAX_QUBITS} qubits, got {n_qubits!r}")
    if not isinstance(n_layers, int) or n_layers < 1:
        raise ConfigurationError(f"QMPS needs n_layers >= 1, got {n_layers!r}")
    b = _Builder(n_qubits)
    for _ in range(n_layers):
        for i in range(n_qubits - 1):
            b.block(i, i + 1)
    return b.build(Topology.QMPS)


def _tree_level(b, level):
    stride = 1 << level
    for parent in range(0, b.n, 2 * stride):
        b.block(parent + stride, parent)  # child controls, lower-index parent survives


def build_qttn(n_qubits: int) -> CircuitLayout:
    levels = _power_of_two_levels(n_qubits, 2)
    b = _Builder(n_qubits)
    for level in range(levels):
        _tree_level(b, level)
    return b.build(Topology.QTTN)


def build_qmera(n_qubits: int) -> CircuitLayout:
    """Tree coarse-graining with a disentangler row in front of every level.

    At level ``l`` the tree pairs are (p, p + 2**l) for p a multiple of 2**(l+1);
    the disentanglers bridge neighbouring pairs, (p + 2**l, p + 2**(l+1)).
    """
    levels = _power_of_two_levels(n_qubits, 4)
    b = _Builder(n_qubits)
    for level in range(levels):
        stride = 1 << level
        for left in range(stride, n_qubits - stride, 2 * stride):
            b.block(left, left + stride)
        _tree_level(b, level)
    return b.build(Topology.QMERA)


def build_layout(topology: Topology | str, n_qubits: int, qmps_layers: int = 1) -> CircuitLayout:
    topology = Topology(topology)
    if topology is Topology.QMPS:
        return build_qmps(n_qubits, qmps_layers)
    if topology is Topology.QTTN:
        return build_qttn(n_qubits)
    return build_qmera(n_qubits)


def param_count(layout: CircuitLayout) -> int:
    return layout.param_count


def qmera_param_count(n_qubits: int) -> int:
    """Closed form: tree 2(n-1) plus 2(n/2**(l+1) - 1) per disentangler row."""
    levels = _power_of_two_levels(n_qubits, 4)
    return 2 * (n_qubits - 1) + sum(2 * (n_qubits // (1 << (l + 1)) - 1) for l in range(levels))
