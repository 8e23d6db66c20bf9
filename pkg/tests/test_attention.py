import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aqpinn.ansatz import build_layout, build_qmps
from aqpinn.attention import (ClassicalMsaParams, QmsaHead, attention_mix, attention_scores,
                              classical_msa_forward, classical_msa_param_count, qmsa_forward,
                              qmsa_param_count, softmax)
from aqpinn.autodiff import jet as J
from aqpinn.errors import ConfigurationError, UsageError

import oracles


def _heads(topology, d, n_heads, rng, scale=np.pi):
    layout = build_layout(topology, d)
    P = layout.param_count
    return [QmsaHead(layout, layout, layout, *(rng.uniform(-scale, scale, P) for _ in range(3)))
            for _ in range(n_heads)]


def test_attention_scores_example():
    A = attention_scores(np.array([1.0, 0.0]), np.array([1.0, -1.0]))
    assert np.array_equal(A, [[0.0, -4.0], [-1.0, -1.0]])


def test_attention_scores_shape_mismatch():
    with pytest.raises(UsageError):
        attention_scores(np.zeros(3), np.zeros(2))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(row):
    a = np.array([row, row[::-1]])
    p = softmax(a)
    assert np.all(np.abs(p.sum(axis=-1) - 1.0) < 1e-12)
    assert np.all(p >= 0)


def test_softmax_is_shift_invariant_and_stable():
    a = np.array([1000.0, 1001.0, 999.0])
    assert np.allclose(softmax(a), softmax(a - 1000.0), atol=1e-15)


def test_attention_mix_uniform_scores_average_values():
    V = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = attention_mix(np.zeros((2, 2)), V, 2)
    assert np.allclose(out, [[2.0, 3.0], [2.0, 3.0]])


def test_attention_mix_errors():
    with pytest.raises(UsageError):
        attention_mix(np.zeros((2, 3)), np.zeros((3, 2)), 2)
    with pytest.raises(UsageError):
        attention_mix(np.zeros((2, 2)), np.zeros((2, 2)), 0)


@pytest.mark.parametrize("topology", ["qmps", "qttn", "qmera"])
def test_qmsa_matches_loop_oracle(topology):
    rng = np.random.default_rng(21)
    heads = _heads(topology, 4, 2, rng)
    tokens = rng.uniform(-2, 2, (3, 4))
    got = qmsa_forward(tokens, heads)
    want = oracles.qmsa_reference(tokens, [(h.layout_K, h.layout_Q, h.layout_V, h.theta_K, h.theta_Q, h.theta_V)
                                           for h in heads])
    assert got.shape == (3, 8)
    assert np.max(np.abs(got - want)) < 1e-12


@pytest.mark.parametrize("topology", ["qmps", "qttn", "qmera"])
def test_qmsa_outputs_are_bounded(topology):
    rng = np.random.default_rng(5)
    heads = _heads(topology, 4, 2, rng)
    out = qmsa_forward(rng.uniform(-10, 10, (50, 4, 4)), heads)
    assert np.all(np.abs(out) <= 1.0)


def test_qmsa_permutation_equivariance_is_exact():
    rng = np.random.default_rng(9)
    heads = _heads("qmps", 4, 2, rng)
    tokens = rng.uniform(-2, 2, (5, 4))
    base = qmsa_forward(tokens, heads)
    for _ in range(10):
        perm = rng.permutation(5)
        assert np.array_equal(qmsa_forward(tokens[perm], heads), base[perm])


def test_qmsa_jet_value_matches_plain_forward():
    rng = np.random.default_rng(2)
    heads = _heads("qttn", 4, 1, rng)
    tokens = rng.uniform(-1, 1, (3, 4))
    jet = J.lift_points(tokens[:, :3], J.ORDER2)
    jet_tokens = J.concatenate([jet, J.Jet.constant(J.ORDER2, tokens[:, 3:])], axis=-1)
    assert np.allclose(qmsa_forward(jet_tokens, heads).value, qmsa_forward(tokens, heads), atol=1e-13)


def test_qmsa_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError):
        qmsa_forward(np.zeros((2, 4)), [])
    with pytest.raises(UsageError):
        qmsa_forward(np.zeros((2, 3)), _heads("qmps", 4, 1, rng))
    layout = build_qmps(4)
    with pytest.raises(ConfigurationError):
        QmsaHead(layout, layout, layout, np.zeros(6), np.zeros(5), np.zeros(6))
    with pytest.raises(ConfigurationError):
        QmsaHead(layout, build_qmps(3), layout, np.zeros(6), np.zeros(4), np.zeros(6))


def test_param_counts():
    rng = np.random.default_rng(0)
    assert qmsa_param_count(_heads("qmps", 8, 2, rng)) == 2 * 3 * 14
    assert classical_msa_param_count(16, 2) == 4 * 16 * 17
    with pytest.raises(ConfigurationError):
        classical_msa_param_count(10, 3)


def test_classical_msa_matches_textbook_oracle():
    rng = np.random.default_rng(4)
    E, H = 8, 2
    flat = rng.normal(size=classical_msa_param_count(E, H))
    params = ClassicalMsaParams.from_flat(flat, E, H)
    X = rng.normal(size=(2, 5, E))
    got = classical_msa_forward(X, params)
    blocks = [params.wq, params.bq, params.wk, params.bk, params.wv, params.bv, params.wo, params.bo]
    for b in range(2):
        want = oracles.classical_msa_reference(X[b], *blocks, H)
        assert np.max(np.abs(got[b] - want)) < 1e-12


def test_classical_msa_permutation_equivariance():
    rng = np.random.default_rng(8)
    params = ClassicalMsaParams.from_flat(rng.normal(size=classical_msa_param_count(4, 2)), 4, 2)
    X = rng.normal(size=(6, 4))
    perm = rng.permutation(6)
    assert np.allclose(classical_msa_forward(X[perm], params), classical_msa_forward(X, params)[perm],
                       atol=1e-14)


def test_classical_msa_width_error():
    params = ClassicalMsaParams.from_flat(np.zeros(classical_msa_param_count(4, 2)), 4, 2)
    with pytest.raises(UsageError):
        classical_msa_forward(np.zeros((3, 5)), params)


def test_score_scaling_uses_head_width():
    V = np.eye(2)
    A = np.array([[0.0, -4.0], [-4.0, 0.0]])
    w = math.exp(-4 / math.sqrt(4))
    out = attention_mix(A, V, 4)
    assert out[0, 0] == pytest.approx(1 / (1 + w))
