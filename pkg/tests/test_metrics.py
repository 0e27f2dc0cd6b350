"""Metrics against independent oracles: pair counting for AUC, hand formulas
for the confusion-based rates, and brute-force threshold search for Youden."""

import numpy as np
import pytest

from octangle.metrics import (
    ConfusionCounts,
    bootstrap_ci,
    confusion_metrics,
    counts_at_threshold,
    diagnostic_threshold,
    evaluation_report,
    roc_auc,
    roc_csv,
)


def pair_count_auc(scores, labels):
    """Probability a random positive outscores a random negative, ties half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def test_auc_matches_pair_counting_oracle():
    rng = np.random.default_rng(4)
    for trial in range(200):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        # quantized scores inject ties
        scores = np.round(rng.random(n), 1)
        _, auc = roc_auc(scores, labels)
        assert auc == pytest.approx(pair_count_auc(scores, labels), abs=1e-12)


def test_auc_perfect_and_inverted():
    labels = np.array([0, 0, 1, 1])
    _, auc = roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), labels)
    assert auc == 1.0
    _, auc = roc_auc(np.array([0.9, 0.8, 0.2, 0.1]), labels)
    assert auc == 0.0
    _, auc = roc_auc(np.array([0.5, 0.5, 0.5, 0.5]), labels)
    assert auc == pytest.approx(0.5, abs=1e-15)


def test_roc_curve_endpoints_and_monotonicity():
    rng = np.random.default_rng(7)
    scores = rng.random(30)
    labels = rng.integers(0, 2, 30)
    labels[:2] = (0, 1)
    curve, _ = roc_auc(scores, labels)
    pts = np.asarray(curve.points)
    assert tuple(pts[0]) == (0.0, 0.0)
    assert tuple(pts[-1]) == (1.0, 1.0)
    assert (np.diff(pts[:, 0]) >= 0).all()
    assert (np.diff(pts[:, 1]) >= 0).all()
    assert curve.thresholds[0] == np.inf
    assert (np.diff(curve.thresholds[1:]) < 0).all()


def test_confusion_metrics_exhaustive_small_grid():
    for tp in range(6):
        for fn in range(6):
            for tn in range(6):
                for fp in range(6):
                    if tp + fn + tn + fp == 0:
                        continue  # empty table is rejected by construction
                    c = ConfusionCounts(tp=tp, fn=fn, tn=tn, fp=fp)
                    m = confusion_metrics(c)
                    sen = tp / (tp + fn) if tp + fn else None
                    spe = tn / (tn + fp) if tn + fp else None
                    assert m["sen"] == sen
                    assert m["spe"] == spe
                    if sen is not None and spe is not None:
                        assert m["bacc"] == pytest.approx((sen + spe) / 2, abs=1e-15)
                    else:
                        assert m["bacc"] is None
                    denom = 2 * tp + fp + fn
                    fm = 2 * tp / denom if denom else None
                    assert m["fm"] == fm


def test_counts_at_threshold_oracle():
    scores = np.array([0.1, 0.4, 0.4, 0.6, 0.9])
    labels = np.array([0, 0, 1, 1, 1])
    c = counts_at_threshold(scores, labels, 0.4)
    # prediction is score >= threshold
    assert (c.tp, c.fn, c.tn, c.fp) == (3, 0, 1, 1)
    c = counts_at_threshold(scores, labels, 0.95)
    assert (c.tp, c.fn, c.tn, c.fp) == (0, 3, 2, 0)


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1, fn=0, tn=0, fp=0)


def test_diagnostic_threshold_maximizes_youden():
    rng = np.random.default_rng(12)
    for trial in range(50):
        n = int(rng.integers(4, 40))
        scores = np.round(rng.random(n), 2)
        labels = rng.integers(0, 2, n)
        labels[:2] = (0, 1)
        curve, _ = roc_auc(scores, labels)
        thr = diagnostic_threshold(curve)
        best = max(
            youden_at(scores, labels, t) for t in np.unique(scores)
        )
        assert youden_at(scores, labels, thr) == pytest.approx(best, abs=1e-12)


def youden_at(scores, labels, thr):
    c = counts_at_threshold(np.asarray(scores), np.asarray(labels), thr)
    return c.tp / (c.tp + c.fn) - c.fp / (c.fp + c.tn)


def test_diagnostic_threshold_prefers_lower_fpr_then_higher_threshold():
    # two thresholds tie on Youden; the lower-FPR one must win
    scores = np.array([0.2, 0.4, 0.6, 0.8])
    labels = np.array([0, 1, 0, 1])
    curve, _ = roc_auc(scores, labels)
    thr = diagnostic_threshold(curve)
    cands = [t for t in np.unique(scores) if youden_at(scores, labels, t) == pytest.approx(youden_at(scores, labels, thr))]
    fprs = []
    for t in cands:
        c = counts_at_threshold(scores, labels, t)
        fprs.append(c.fp / (c.fp + c.tn))
    c = counts_at_threshold(scores, labels, thr)
    assert c.fp / (c.fp + c.tn) == min(fprs)


def test_single_class_scores_rejected():
    with pytest.raises(ValueError):
        roc_auc(np.array([0.4, 0.6]), np.array([1, 1]))


def auc_stat(s, y):
    return roc_auc(s, y)[1]


def test_bootstrap_ci_deterministic_and_ordered():
    rng = np.random.default_rng(3)
    scores = rng.random(60)
    labels = (scores + rng.normal(0, 0.3, 60) > 0.5).astype(int)
    labels[:2] = (0, 1)
    lo1, hi1 = bootstrap_ci(scores, labels, auc_stat, n_resamples=200, seed=5)
    lo2, hi2 = bootstrap_ci(scores, labels, auc_stat, n_resamples=200, seed=5)
    assert (lo1, hi1) == (lo2, hi2)
    assert 0.0 <= lo1 <= hi1 <= 1.0
    _, auc = roc_auc(scores, labels)
    assert lo1 - 0.1 <= auc <= hi1 + 0.1


def test_bootstrap_ci_needs_enough_resamples():
    with pytest.raises(ValueError):
        bootstrap_ci(np.array([0.2, 0.8]), np.array([0, 1]), auc_stat, n_resamples=10, seed=0)


def test_evaluation_report_fields():
    rng = np.random.default_rng(9)
    scores = rng.random(80)
    labels = (scores > 0.4).astype(int)
    rep = evaluation_report(scores, labels, n_resamples=100, seed=2)
    for key in ("auc", "auc_ci", "threshold", "sen", "spe", "bacc", "fm", "n_pos", "n_neg", "ci_method"):
        assert key in rep
    assert rep["n_pos"] + rep["n_neg"] == 80
    assert rep["auc"] == 1.0  # labels derived from scores
    assert rep["sen"] == 1.0 and rep["spe"] == 1.0


def test_roc_csv_round_trip():
    scores = np.array([0.1, 0.5, 0.9])
    labels = np.array([0, 1, 1])
    curve, _ = roc_auc(scores, labels)
    text = roc_csv(curve)
    lines = text.strip().splitlines()
    assert lines[0] == "threshold,fpr,tpr"
    assert len(lines) == len(curve.points) + 1
    row = lines[1].split(",")
    assert float(row[1]) == 0.0 and float(row[2]) == 0.0
