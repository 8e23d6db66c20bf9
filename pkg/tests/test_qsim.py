import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aqpinn.ansatz import CircuitLayout, GateSlot, build_qmera, build_qmps, build_qttn
from aqpinn.errors import ConfigurationError, UsageError
from aqpinn.qsim import (Gate, GateKind, ObservableZ, Statevector, angle_embed, apply_gate, circuit_unitary,
                         circuit_unitary_derivative, cnot, expect_z, expectations, init_state, run_circuit,
                         ry, rz)

import oracles


def test_init_state_one_and_two_qubits():
    assert np.array_equal(init_state(1).amplitudes, np.array([1 + 0j, 0]))
    assert np.array_equal(init_state(2).amplitudes, np.array([1, 0, 0, 0], dtype=complex))


@pytest.mark.parametrize("n", [0, 13, -1])
def test_init_state_rejects_out_of_range(n):
    with pytest.raises(ConfigurationError):
        init_state(n)


def test_ry_pi_flips_zero_to_one():
    s = apply_gate(init_state(1), ry(0, math.pi))
    assert np.allclose(s.amplitudes, [0, 1], atol=1e-15)


def test_cnot_truth_table_control_zero_target_one():
    # qubit 0 set, qubit 1 clear: basis index 1; afterwards both set: index 3
    s = apply_gate(init_state(2), ry(0, math.pi))
    s = apply_gate(s, cnot(0, 1))
    assert abs(s.amplitudes[3]) == pytest.approx(1.0, abs=1e-15)


def test_cnot_leaves_state_with_clear_control():
    s = apply_gate(init_state(2), ry(1, math.pi))  # index 2
    s = apply_gate(s, cnot(0, 1))
    assert abs(s.amplitudes[2]) == pytest.approx(1.0, abs=1e-15)


def test_rz_does_not_change_z_expectation():
    s = apply_gate(init_state(1), ry(0, 0.8))
    before = expect_z(s, ObservableZ(0))
    after = expect_z(apply_gate(s, rz(0, 1.3)), ObservableZ(0))
    assert after == pytest.approx(before, abs=1e-15)


def test_apply_gate_invalid_target():
    with pytest.raises(UsageError):
        apply_gate(init_state(2), ry(2, 0.1))
    with pytest.raises(UsageError):
        cnot(1, 1)
    with pytest.raises(UsageError):
        Gate(GateKind.RY, (0, 1), 0.2)


def test_angle_embed_examples():
    s0 = init_state(3)
    assert np.array_equal(angle_embed(s0, [0, 0, 0]).amplitudes, s0.amplitudes)
    assert np.allclose(angle_embed(init_state(1), [math.pi]).amplitudes, [0, 1], atol=1e-15)
    assert expect_z(angle_embed(init_state(1), [math.pi / 2]), 0) == pytest.approx(0.0, abs=1e-15)


def test_angle_embed_length_mismatch():
    with pytest.raises(UsageError):
        angle_embed(init_state(2), [0.1])


@pytest.mark.parametrize("theta", [0.3, 1.1, 2.7])
def test_expect_z_single_qubit_is_cosine(theta):
    assert expect_z(apply_gate(init_state(1), ry(0, theta)), ObservableZ(0)) == pytest.approx(
        math.cos(theta), abs=1e-15)


def test_expect_z_basics_and_errors():
    assert expect_z(init_state(1), ObservableZ(0)) == 1.0
    assert abs(expect_z(apply_gate(init_state(1), ry(0, math.pi / 2)), 0)) < 1e-12
    with pytest.raises(UsageError):
        expect_z(init_state(2), ObservableZ(2))


def test_run_circuit_small_examples():
    empty = CircuitLayout(1)
    assert run_circuit([0.0], empty, [], [ObservableZ(0)]) == pytest.approx([1.0])
    one = CircuitLayout(1, (GateSlot(GateKind.RY, (0,), 0),))
    assert run_circuit([0.0], one, [math.pi / 2], [0])[0] == pytest.approx(0.0, abs=1e-15)


def test_run_circuit_length_errors():
    layout = build_qmps(4)
    with pytest.raises(UsageError):
        run_circuit(np.zeros(3), layout, np.zeros(6), [0])
    with pytest.raises(UsageError):
        run_circuit(np.zeros(4), layout, np.zeros(5), [0])


def test_statevector_length_invariant():
    with pytest.raises(UsageError):
        Statevector(2, np.zeros(3, dtype=complex))


@pytest.mark.parametrize("build", [build_qmps, build_qttn, build_qmera])
def test_run_circuit_matches_dense_oracle(build):
    layout = build(4)
    rng = np.random.default_rng(11)
    for _ in range(25):
        f = rng.uniform(-np.pi, np.pi, 4)
        th = rng.uniform(-np.pi, np.pi, layout.param_count)
        got = run_circuit(f, layout, th, range(4))
        want = oracles.run_dense(f, layout, th, range(4))
        assert np.max(np.abs(got - want)) < 1e-12


def test_batched_expectations_agree_with_single_state_runs():
    layout = build_qmera(4)
    rng = np.random.default_rng(3)
    F = rng.uniform(-2, 2, (5, 2, 4))
    th = rng.uniform(-2, 2, layout.param_count)
    batch = expectations(F, layout, th, [0, 2, 3])
    for idx in np.ndindex(5, 2):
        assert np.allclose(batch[idx], run_circuit(F[idx], layout, th, [0, 2, 3]), atol=1e-13)


def test_circuit_unitary_matches_dense_and_is_unitary():
    layout = build_qmps(3, 2)
    th = np.random.default_rng(4).normal(size=layout.param_count)
    U = circuit_unitary(layout, th)
    assert np.allclose(U, oracles.layout_matrix(layout, th), atol=1e-13)
    assert np.allclose(U.conj().T @ U, np.eye(8), atol=1e-13)


def test_circuit_unitary_derivative_matches_finite_difference():
    layout = build_qttn(4)
    th = np.random.default_rng(5).normal(size=layout.param_count)
    h = 1e-6
    for k in range(layout.param_count):
        e = np.zeros_like(th)
        e[k] = h
        fd = (circuit_unitary(layout, th + e) - circuit_unitary(layout, th - e)) / (2 * h)
        assert np.allclose(circuit_unitary_derivative(layout, th, k), fd, atol=1e-8)


gate_strategy = st.one_of(
    st.tuples(st.just("ry"), st.integers(0, 4), st.floats(-10, 10)),
    st.tuples(st.just("rz"), st.integers(0, 4), st.floats(-10, 10)),
    st.tuples(st.just("cnot"), st.integers(0, 4), st.integers(0, 4)).filter(lambda g: g[1] != g[2]),
)


@settings(max_examples=40, deadline=None)
@given(st.lists(gate_strategy, min_size=1, max_size=100))
def test_norm_preserved_over_random_gate_sequences(gates):
    s = angle_embed(init_state(5), [0.3, -1.2, 2.0, 0.1, 0.7])
    for kind, a, b in gates:
        g = cnot(a, b) if kind == "cnot" else (ry(a, b) if kind == "ry" else rz(a, b))
        s = apply_gate(s, g)
    assert abs(s.norm - 1.0) < 1e-12
    for q in range(5):
        assert -1.0 - 1e-12 <= expect_z(s, q) <= 1.0 + 1e-12
