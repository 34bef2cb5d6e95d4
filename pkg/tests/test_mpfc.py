import math

import numpy as np
import pytest

from fearnet import nn
from fearnet.errors import ConfigError, InputError, StateError, TrainingError
from fearnet.mpfc import MPFC, ClassStatistics, covariance_jitter, estimate_statistics

from conftest import blobs


def pretrained_tiny(dropout):
    """Small double-precision network moved off its initial point.

    At initialization the loss is ~1e5 (large input-reconstruction weight,
    unit biases), which drowns small gradient coordinates in finite-difference
    cancellation noise; a short fit brings it to a scale where central
    differences are accurate.
    """
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 8))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = np.arange(16) % 3
    m = MPFC(8, (6, 4), (1e4, 1.0, 0.1), dropout=dropout, learning_rate=1e-2,
             decoder_lr_multiplier=1.0, batch_size=16, seed=0, dtype=np.float64)
    m.train_base(x, y, 300)
    return m, x[:6], m._columns(y[:6])


@pytest.mark.parametrize("dropout", [0.0, 0.3])
def test_joint_loss_gradient(dropout):
    m, x, cols = pretrained_tiny(dropout)

    def loss_fn(_arrays):
        terms, grads = m._loss_and_grads(x, cols, True, np.random.default_rng(5))
        return terms[0], grads

    assert nn.gradient_check(loss_fn, m.parameter_arrays(), h=1e-5) < 1e-4


def test_reconstruction_terms_reach_the_decoder():
    m, x, cols = pretrained_tiny(0.0)
    _, grads = m._loss_and_grads(x, cols)
    n_dec = 2 * len(m.decoder)
    assert all(np.abs(g).sum() > 0 for g in grads[-n_dec:])
    m.recon_weights = (0.0, 0.0, 0.0)
    _, grads = m._loss_and_grads(x, cols)
    assert all(np.abs(g).sum() == 0 for g in grads[-n_dec:])


def test_layout():
    m = MPFC(20, (16, 8, 4), (1.0, 1.0, 1.0, 1.0))
    assert [d for d, _ in m.encoder_spec.layer_dims] == [20, 16, 8]
    assert m.decoder_spec.layer_dims == [(4, 4), (4, 8), (8, 16), (16, 20)]
    assert m.bottleneck_dim == 4
    with pytest.raises(ConfigError):
        MPFC(20, (16, 8), (1.0, 1.0))
    with pytest.raises(ConfigError):
        MPFC(20, (16, 8), (1.0, 1.0, 1.0), covariance_mode="banded")


def test_loss_terms_hand_check():
    m = MPFC(3, (2,), (2.0, 0.5), dropout=0.0, dtype=np.float64)
    m.add_classes([0, 1])
    x = np.array([[0.5, -1.0, 2.0]])
    total, cls, recon = m.loss(x, [1])
    h = m.encode(x)
    p = nn.softmax(h @ m.head[0].weights + m.head[0].biases)
    dfp = nn.forward(m.decoder, m.decoder_spec, h)
    expected_recon = 2.0 * np.sum((dfp.output - x) ** 2) + 0.5 * np.sum((dfp.activations[1] - h) ** 2)
    assert cls == pytest.approx(-math.log(p[0, 1]))
    assert recon == pytest.approx(expected_recon)
    assert total == pytest.approx(cls + recon)


def test_add_classes_preserves_existing_columns():
    m = MPFC(4, (3,), (1.0, 1.0))
    m.add_classes([3, 1])
    before = m.head[0].weights.copy()
    assert m.add_classes([1, 8]) == [8]
    assert m.classes == [3, 1, 8]
    np.testing.assert_array_equal(m.head[0].weights[:, :2], before)
    assert m.head[0].biases[-1] == 1.0


def test_untrained_prediction_is_an_error():
    with pytest.raises(StateError):
        MPFC(4, (3,), (1.0, 1.0)).predict(np.zeros((1, 4)))


def test_unknown_label_rejected():
    m = MPFC(4, (3,), (1.0, 1.0))
    m.add_classes([0])
    with pytest.raises(InputError):
        m.loss(np.zeros((1, 4)), [5])


def test_separable_base_training():
    x, y = blobs(classes=2, dim=6, per_class=50)
    m = MPFC(6, (10, 5), batch_size=450, seed=1)
    m.train_base(x, y, 1000)
    assert np.mean(m.predict(x) == y) >= 0.99


def test_non_finite_input_raises_with_epoch():
    m = MPFC(3, (2,), (1.0, 1.0))
    x = np.array([[np.nan, 0.0, 0.0]])
    with pytest.raises(TrainingError, match="epoch 0"):
        m.train_base(x, [0], 2)


# class statistics


def test_statistics_match_numpy_cov_plus_jitter():
    rng = np.random.default_rng(0)
    codes = rng.standard_normal((50, 4)) @ rng.standard_normal((4, 4))
    st = estimate_statistics(codes, "full")
    ref = np.cov(codes, rowvar=False)
    jitter = covariance_jitter(np.trace(ref), 4)
    np.testing.assert_allclose(st.mean, codes.mean(axis=0), rtol=1e-6)
    np.testing.assert_allclose(st.cov, ref + jitter * np.eye(4), rtol=1e-5)
    assert st.count == 50 and st.scalar_count == 4 + 16


def test_single_code_gives_jitter_identity():
    st = estimate_statistics(np.ones((1, 3)), "full")
    np.testing.assert_allclose(st.cov, 1e-8 * np.eye(3), rtol=1e-6)
    assert st.sample(5, np.random.default_rng(0)).shape == (5, 3)


def test_diagonal_mode_reads_off_full_diagonal():
    rng = np.random.default_rng(1)
    codes = rng.standard_normal((30, 5)) * np.array([1.0, 2.0, 3.0, 0.5, 0.1])
    full = estimate_statistics(codes, "full")
    diag = estimate_statistics(codes, "diagonal")
    np.testing.assert_array_equal(diag.cov, np.diag(full.cov))
    assert diag.mode == "diagonal" and diag.scalar_count == 10


def test_modes_agree_on_axis_aligned_data():
    rng = np.random.default_rng(2)
    scale = np.array([1.0, 3.0])
    full = ClassStatistics(np.zeros(2, np.float32), np.diag(scale**2).astype(np.float32), 1)
    diag = ClassStatistics(np.zeros(2, np.float32), (scale**2).astype(np.float32), 1)
    a = full.sample(4, np.random.default_rng(9))
    b = diag.sample(4, np.random.default_rng(9))
    np.testing.assert_allclose(a, b, rtol=1e-6)
    del rng


def test_near_singular_covariance_still_samples():
    v = np.ones((3, 1))
    st = ClassStatistics(np.zeros(3, np.float32), (v @ v.T).astype(np.float32), 2)
    out = st.sample(10, np.random.default_rng(0))
    assert np.all(np.isfinite(out))


def test_sampling_moments():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((6, 6))
    cov = a @ a.T + 0.5 * np.eye(6)
    st = ClassStatistics(np.arange(6, dtype=np.float32), cov.astype(np.float32), 100)
    draws = st.sample(40_000, np.random.default_rng(5))
    se = np.sqrt(np.diag(cov) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - np.arange(6)) < 4 * se)
    rel = np.linalg.norm(np.cov(draws, rowvar=False) - cov) / np.linalg.norm(cov)
    assert rel < 0.05


# consolidation


@pytest.fixture(scope="module")
def base_model():
    x, y = blobs(classes=5, dim=8, per_class=40, separation=8.0, seed=3)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    m = MPFC(8, (24, 12), batch_size=32, seed=0)
    base = y < 3
    m.train_base(x[base], y[base], 1000)
    m.update_class_statistics(x[base], y[base])
    return m, x, y


def test_replay_set_shapes(base_model):
    m, _, _ = base_model
    px, py = m.replay_set(7, np.random.default_rng(0))
    assert px.shape == (21, 8) and sorted(set(py.tolist())) == [0, 1, 2]
    with pytest.raises(StateError):
        m.sample_codes(9, 3, np.random.default_rng(0))


def test_consolidation_learns_new_classes_and_keeps_old(base_model):
    import copy

    m = copy.deepcopy(base_model[0])
    _, x, y = base_model
    old = y < 3
    before = np.mean(m.predict(x[old]) == y[old])
    new = y >= 3
    report = m.consolidate(x[new], y[new], 60, np.random.default_rng(1))
    assert report.new_classes == [3, 4] and report.old_classes == [0, 1, 2]
    assert report.pseudo_per_class == 40 and report.pseudo_total == 120
    assert report.mixture_size == 80 + 120
    assert sorted(m.stats) == [0, 1, 2, 3, 4]
    assert np.mean(m.predict(x[old]) == y[old]) >= 0.9 * before
    assert np.mean(m.predict(x[new]) == y[new]) >= 0.9


def test_consolidation_without_replay_uses_no_pseudo_examples(base_model):
    import copy

    m = copy.deepcopy(base_model[0])
    _, x, y = base_model
    report = m.consolidate(x[y == 3], y[y == 3], 1, np.random.default_rng(0), pseudorehearsal=False)
    assert report.pseudo_per_class == 0 and report.mixture_size == 40


def test_parameter_and_statistics_counts(base_model):
    m = base_model[0]
    enc = (8 * 24 + 24) + (24 * 12 + 12)
    dec = (12 * 12 + 12) + (12 * 24 + 24) + (24 * 8 + 8)
    head = 12 * 3 + 3
    assert m.parameter_count() == enc + dec + head
    assert m.statistics_scalar_count() == 3 * (12 + 144)
