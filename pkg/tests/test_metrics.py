import numpy as np
import pytest

from quadguard.errors import ConfigError
from quadguard.metrics import best_f1_threshold, compute_metrics, roc_auc

from oracles import pairwise_auc, prf_by_counting


def test_perfect_alarms_score_one():
    labels = np.array([0, 1, 1, 0, 1, 0, 0, 1])
    rep = compute_metrics(labels, labels)
    assert rep.precision == rep.recall == rep.f1 == 1.0
    assert not rep.zero_alarms


def test_counted_example_matches_harmonic_mean():
    # TP=9, FP=1, FN=3
    labels = np.array([1] * 12 + [0] * 8)
    alarms = np.array([1] * 9 + [0] * 3 + [1] + [0] * 7)
    rep = compute_metrics(alarms, labels)
    assert rep.tp == 9 and rep.fp == 1 and rep.fn == 3
    assert rep.precision == pytest.approx(0.9, abs=1e-12)
    assert rep.recall == pytest.approx(0.75, abs=1e-12)
    assert rep.f1 == pytest.approx(0.8182, abs=5e-5)


def test_all_clear_alarms_on_attacked_data():
    labels = np.array([0, 1, 1, 1, 0])
    rep = compute_metrics(np.zeros(5), labels)
    assert rep.recall == 0.0
    assert rep.f1 == 0.0
    assert rep.zero_alarms  # precision undefined, reported as 0 with flag
    assert rep.precision == 0.0


def test_f1_identity_holds_on_random_inputs():
    rng = np.random.default_rng(17)
    for _ in range(50):
        n = int(rng.integers(5, 200))
        alarms = rng.integers(0, 2, n)
        labels = rng.integers(0, 2, n)
        rep = compute_metrics(alarms, labels)
        if rep.precision + rep.recall > 0:
            ident = 2 * rep.precision * rep.recall / (rep.precision + rep.recall)
            assert abs(rep.f1 - ident) < 1e-12
        p, r, f1 = prf_by_counting(alarms, labels)
        assert rep.precision == pytest.approx(p, abs=1e-15)
        assert rep.recall == pytest.approx(r, abs=1e-15)
        assert rep.f1 == pytest.approx(f1, abs=1e-15)


def test_length_mismatch_rejected():
    with pytest.raises(ConfigError):
        compute_metrics(np.zeros(5), np.zeros(6))
    with pytest.raises(ConfigError):
        roc_auc(np.zeros(5), np.zeros(6))


def test_scores_equal_labels_auc_one():
    labels = np.array([0, 1, 0, 1, 1, 0])
    rep = roc_auc(labels.astype(float), labels)
    assert rep.auc == 1.0
    assert rep.defined


def test_random_scores_auc_near_half():
    rng = np.random.default_rng(23)
    n = 10_000
    labels = np.r_[np.ones(n // 2), np.zeros(n // 2)].astype(int)
    scores = rng.random(n)
    rep = roc_auc(scores, labels)
    assert abs(rep.auc - 0.5) <= 0.02


def test_sweep_auc_equals_pairwise_probability_exactly():
    rng = np.random.default_rng(27)
    for trial in range(20):
        n = 50
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        # quantized scores force ties across and within classes
        scores = rng.integers(0, 5, n) / 4.0
        rep = roc_auc(scores, labels)
        assert rep.auc == pairwise_auc(scores, labels)


def test_single_class_labels_flagged():
    rep = roc_auc(np.array([0.1, 0.5, 0.9]), np.array([1, 1, 1]))
    assert not rep.defined
    assert np.isnan(rep.auc)
    assert rep.flags


def test_roc_curve_is_monotone_with_unit_endpoints():
    rng = np.random.default_rng(31)
    scores = rng.normal(size=300)
    labels = (rng.random(300) < 0.3).astype(int)
    rep = roc_auc(scores, labels)
    assert rep.fpr[0] == 0.0 and rep.tpr[0] == 0.0
    assert rep.fpr[-1] == 1.0 and rep.tpr[-1] == 1.0
    assert np.all(np.diff(rep.fpr) >= 0)
    assert np.all(np.diff(rep.tpr) >= 0)
    assert 0.0 <= rep.auc <= 1.0
    # thresholds sweep from high to low
    assert np.all(np.diff(rep.thresholds) <= 0)


def test_best_f1_threshold_recovers_separating_cut():
    labels = np.array([0] * 50 + [1] * 50)
    scores = np.r_[np.linspace(0, 0.4, 50), np.linspace(0.6, 1.0, 50)]
    thr, f1 = best_f1_threshold(scores, labels)
    assert f1 == 1.0
    assert 0.4 < thr <= 0.6
    alarms = (scores >= thr).astype(int)
    assert compute_metrics(alarms, labels).f1 == 1.0


def test_best_f1_threshold_matches_exhaustive_search():
    rng = np.random.default_rng(37)
    scores = rng.integers(0, 8, 120) / 7.0
    labels = (rng.random(120) < 0.4).astype(int)
    thr, f1 = best_f1_threshold(scores, labels)
    brute = max(compute_metrics((scores >= u).astype(int), labels).f1
                for u in np.unique(scores))
    assert f1 == pytest.approx(brute, abs=1e-12)
    assert compute_metrics((scores >= thr).astype(int), labels).f1 == \
        pytest.approx(brute, abs=1e-12)


def test_best_f1_threshold_with_no_positives():
    thr, f1 = best_f1_threshold(np.array([0.3, 0.2]), np.array([0, 0]))
    assert f1 == 0.0 and thr == float("inf")
