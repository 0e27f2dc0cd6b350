"""Confusion metrics, ROC/AUC, diagnostic threshold, bootstrap intervals.

Positive class is angle-closure throughout.  A sample is called positive
when its score is >= the threshold.  Metrics with zero denominators are
reported as None, never silently as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")
        if self.tp + self.tn + self.fp + self.fn == 0:
            raise ValueError("at least one sample required")


@dataclass(frozen=True)
class RocCurve:
    """(fpr, tpr) points in descending-threshold order, from (0,0) to (1,1).

    thresholds[0] is +inf (the empty-positive operating point); the rest are
    the distinct score values, descending.
    """

    points: tuple[tuple[float, float], ...]
    thresholds: tuple[float, ...]

    def __post_init__(self):
        if len(self.points) != len(self.thresholds) or len(self.points) < 2:
            raise ValueError("curve needs matched points/thresholds, length >= 2")
        if self.points[0] != (0.0, 0.0) or self.points[-1] != (1.0, 1.0):
            raise ValueError("curve must run from (0,0) to (1,1)")
        fpr = [p[0] for p in self.points]
        tpr = [p[1] for p in self.points]
        if np.any(np.diff(fpr) < 0) or np.any(np.diff(tpr) < 0):
            raise ValueError("fpr and tpr must be non-decreasing")


def confusion_metrics(c: ConfusionCounts) -> dict:
    """Sen, Spe, BAcc and F-measure; None where the denominator is zero."""
    sen = c.tp / (c.tp + c.fn) if c.tp + c.fn else None
    spe = c.tn / (c.tn + c.fp) if c.tn + c.fp else None
    bacc = (sen + spe) / 2.0 if sen is not None and spe is not None else None
    fm = 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn) if 2 * c.tp + c.fp + c.fn else None
    return {"sen": sen, "spe": spe, "bacc": bacc, "fm": fm}


def counts_at_threshold(scores: np.ndarray, labels: np.ndarray, threshold: float) -> ConfusionCounts:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _validate_scored(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be matching 1-D arrays")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if labels.min() == labels.max():
        raise ValueError("both classes must be present")
    return scores, labels


def roc_auc(scores, labels) -> tuple[RocCurve, float]:
    """ROC over distinct score thresholds and trapezoidal AUC.

    Tied scores collapse into one curve step, so the trapezoid rule gives
    the Mann-Whitney statistic with half credit for ties.
    """
    scores, labels = _validate_scored(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    distinct = np.flatnonzero(np.diff(s)) if s.size > 1 else np.array([], dtype=int)
    ends = np.concatenate([distinct, [s.size - 1]])
    tp = np.cumsum(y)[ends]
    fp = ends + 1 - tp
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    thresholds = (np.inf,) + tuple(s[ends])
    curve = RocCurve(points=tuple(zip(fpr, tpr)), thresholds=thresholds)
    auc = float(np.trapezoid(tpr, fpr))
    return curve, auc


def diagnostic_threshold(curve: RocCurve) -> float:
    """Youden-optimal threshold over observed score values.

    Ties in Sen+Spe-1 go to the higher specificity, then the lower threshold.
    """
    best = None
    for (fpr, tpr), thr in zip(curve.points[1:], curve.thresholds[1:]):
        key = (tpr - fpr, -fpr, -thr)
        if best is None or key > best[0]:
            best = (key, thr)
    return float(best[1])


def bootstrap_ci(
    scores,
    labels,
    statistic,
    n_resamples: int = 2000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for statistic(scores, labels).

    Resamples drawing only one class are redrawn up to 10 times, then
    skipped.  Deterministic for a given seed.
    """
    scores, labels = _validate_scored(scores, labels)
    if n_resamples < 100:
        raise ValueError("need at least 100 resamples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    rng = np.random.default_rng(seed)
    n = scores.size
    stats = []
    for _ in range(n_resamples):
        for _ in range(10):
            idx = rng.integers(0, n, size=n)
            sub = labels[idx]
            if sub.min() != sub.max():
                stats.append(statistic(scores[idx], sub))
                break
    if not stats:
        raise ValueError("all bootstrap resamples were single-class")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(np.asarray(stats, dtype=np.float64), [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def evaluation_report(
    scores,
    labels,
    n_resamples: int = 2000,
    level: float = 0.95,
    seed: int = 0,
) -> dict:
    """Full JSON-ready report at the Youden diagnostic threshold."""
    scores, labels = _validate_scored(scores, labels)
    curve, auc = roc_auc(scores, labels)
    threshold = diagnostic_threshold(curve)
    counts = counts_at_threshold(scores, labels, threshold)

    def auc_stat(s, y):
        return roc_auc(s, y)[1]

    lo, hi = bootstrap_ci(scores, labels, auc_stat, n_resamples=n_resamples, level=level, seed=seed)
    report = {"auc": auc, "auc_ci": [lo, hi], "threshold": threshold}
    report.update(confusion_metrics(counts))
    report["n_pos"] = int(labels.sum())
    report["n_neg"] = int(labels.size - labels.sum())
    report["ci_method"] = f"percentile bootstrap, {n_resamples} resamples, level {level}"
    return report


def roc_csv(curve: RocCurve) -> str:
    lines = ["threshold,fpr,tpr"]
    for (fpr, tpr), thr in zip(curve.points, curve.thresholds):
        lines.append(f"{thr},{fpr},{tpr}")
    return "\n".join(lines) + "\n"
