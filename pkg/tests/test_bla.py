import numpy as np
import pytest

from fearnet.bla import BLA, CLAMP, combined_predict, odds_weighted_confidence, route, train_gate
from fearnet.errors import InputError, StateError
from fearnet.hc import ExemplarStore
from fearnet.mpfc import MPFC

from conftest import blobs


def test_odds_weighting_and_clamp():
    assert odds_weighted_confidence(0.6, 0.5) == pytest.approx(0.6)
    assert odds_weighted_confidence(0.5, 0.75) == pytest.approx(1.5)
    assert odds_weighted_confidence(1.0, 1.0) == pytest.approx((1 - CLAMP) / CLAMP)
    assert odds_weighted_confidence(1.0, 0.0) == pytest.approx(CLAMP / (1 - CLAMP))


def test_route_prefers_long_term_on_ties():
    p_hc = np.array([[0.8, 0.2]])
    p_mpfc = np.array([[0.8, 0.1, 0.1]])
    labels, used = route(p_hc, [5, 6], p_mpfc, [0, 1, 2], np.array([0.5]))
    assert labels.tolist() == [0] and not used[0]


def test_route_per_row():
    p_hc = np.array([[0.9, 0.1], [0.6, 0.4]])
    p_mpfc = np.array([[0.7, 0.3], [0.2, 0.8]])
    a = np.array([0.9, 0.1])
    labels, used = route(p_hc, [10, 11], p_mpfc, [0, 1], a)
    # row 0: psi = 0.9 * 9 > 0.7 -> recent; row 1: psi = 0.6 / 9 < 0.8 -> long-term
    assert labels.tolist() == [10, 1] and used.tolist() == [True, False]


def test_gate_training_needs_both_sides():
    gate = BLA(3, (4,), seed=0)
    with pytest.raises(InputError):
        gate.fit(np.zeros((2, 3)), np.zeros((0, 3)))
    with pytest.raises(StateError):
        gate.score(np.zeros((1, 3)))


def test_gate_separates_disjoint_clusters():
    rng = np.random.default_rng(0)
    recent = rng.standard_normal((100, 4)) + 6
    replay = rng.standard_normal((100, 4)) - 6
    gate = BLA(4, (8, 4), batch_size=32, seed=0)
    gate.fit(recent, replay, epochs=20)
    acc = (np.mean(gate.score(recent) > 0.5) + np.mean(gate.score(replay) < 0.5)) / 2
    assert acc >= 0.99


def test_reset_restores_initial_weights():
    gate = BLA(3, (4,), seed=2)
    first = gate.params[0].weights.copy()
    gate.fit(np.ones((4, 3)), -np.ones((4, 3)), epochs=2)
    gate.reset()
    assert not gate.trained
    assert not np.array_equal(first, gate.params[0].weights)  # fresh draw from the init stream


@pytest.fixture(scope="module")
def memories():
    x, y = blobs(classes=4, dim=6, per_class=150, separation=10.0, seed=1)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    m = MPFC(6, (16, 8), batch_size=32, seed=0)
    old = y < 2
    m.train_base(x[old], y[old], 300)
    m.update_class_statistics(x[old], y[old])
    hc = ExemplarStore()
    hc.store_batch(x[~old], y[~old])
    return m, hc, x, y


def test_train_gate_returns_pseudo_count(memories):
    m, hc, _, _ = memories
    gate = BLA(6, (16, 8), batch_size=32, seed=0)
    used = train_gate(gate, hc, m, np.random.default_rng(0), epochs=10)
    assert used == hc.pseudo_count() * 2 and gate.trained


def test_train_gate_without_long_term_stats_is_skipped():
    m = MPFC(3, (2,), (1.0, 1.0))
    hc = ExemplarStore()
    hc.store_batch(np.ones((2, 3)), [0, 0])
    gate = BLA(3, (2,))
    assert train_gate(gate, hc, m, np.random.default_rng(0)) is None and not gate.trained


def test_gated_prediction_on_separable_memories(memories):
    m, hc, x, y = memories
    gate = BLA(6, (16, 8), batch_size=32, seed=0)
    train_gate(gate, hc, m, np.random.default_rng(0), epochs=20)
    recent = y >= 2
    assert np.median(gate.score(x[recent])) >= 0.9
    assert np.median(gate.score(x[~recent])) <= 0.1
    assert np.mean(combined_predict(x, hc, m, gate) == y) >= 0.95


def test_untrained_gate_falls_back_to_even_odds(memories):
    m, hc, x, _ = memories
    p_hc, hc_classes = hc.recall(x)
    p_m, m_classes = m.predict_proba(x)
    expected, _ = route(p_hc, hc_classes, p_m, m_classes, np.full(len(x), 0.5))
    np.testing.assert_array_equal(combined_predict(x, hc, m, None), expected)
