"""Point-wise detection metrics: precision/recall/F1, ROC sweep, and AUC.

Confusion counts are taken per timestep over the whole sequence (no event
grouping and no point-adjustment).  The AUC is accumulated in integer
arithmetic over threshold groups, which makes it bit-identical to the
pairwise rank probability P(score_pos > score_neg) + 0.5 P(tie).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class MetricsReport:
    """Per-detector confusion counts and their derived scores."""

    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    zero_alarms: bool  # no positive predictions: precision reported as 0

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "zero_alarms": self.zero_alarms}


@dataclass(frozen=True)
class RocReport:
    """ROC sweep over unique score thresholds plus the trapezoid AUC."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    defined: bool  # False when labels contain a single class
    flags: tuple = field(default_factory=tuple)


def _binary(arr, name: str) -> np.ndarray:
    a = np.asarray(arr)
    if a.ndim != 1:
        raise ConfigError(f"{name} must be 1-D, got shape {a.shape}")
    a = (a != 0).astype(np.int64)
    return a


def compute_metrics(alarms, labels) -> MetricsReport:
    """Point-wise precision/recall/F1 from aligned alarm and label bits."""
    a = _binary(alarms, "alarms")
    y = _binary(labels, "labels")
    if a.shape[0] != y.shape[0]:
        raise ConfigError(f"alarms ({a.shape[0]}) and labels ({y.shape[0]}) "
                          "must have equal length")
    tp = int(np.sum((a == 1) & (y == 1)))
    fp = int(np.sum((a == 1) & (y == 0)))
    fn = int(np.sum((a == 0) & (y == 1)))
    tn = int(np.sum((a == 0) & (y == 0)))
    zero_alarms = (tp + fp) == 0
    precision = 0.0 if zero_alarms else tp / (tp + fp)
    recall = 0.0 if (tp + fn) == 0 else tp / (tp + fn)
    f1 = (2.0 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return MetricsReport(tp=tp, fp=fp, fn=fn, tn=tn, precision=precision,
                         recall=recall, f1=f1, zero_alarms=zero_alarms)


def roc_auc(scores, labels) -> RocReport:
    """Threshold sweep over unique scores; alarm means ``score >= threshold``.

    Ties in the scores are handled as a single sweep point, so the trapezoid
    over each tied group contributes exactly half of its pos x neg rectangle,
    matching the rank-based definition of AUC.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1:
        raise ConfigError(f"scores must be 1-D, got shape {s.shape}")
    y = _binary(labels, "labels")
    if s.shape[0] != y.shape[0]:
        raise ConfigError(f"scores ({s.shape[0]}) and labels ({y.shape[0]}) "
                          "must have equal length")
    if not np.all(np.isfinite(s)):
        raise ConfigError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = int(y.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        return RocReport(fpr=np.array([0.0, 1.0]), tpr=np.array([0.0, 1.0]),
                         thresholds=np.array([np.inf, -np.inf]),
                         auc=float("nan"), defined=False,
                         flags=("single-class labels: AUC undefined",))

    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]

    fpr = [0.0]
    tpr = [0.0]
    thresholds = [np.inf]
    tp = fp = 0
    area2 = 0  # accumulates 2 * (P * N) * area, exactly, in integers
    i = 0
    n = s_sorted.shape[0]
    while i < n:
        j = i
        dtp = dfp = 0
        while j < n and s_sorted[j] == s_sorted[i]:
            if y_sorted[j] == 1:
                dtp += 1
            else:
                dfp += 1
            j += 1
        area2 += dfp * (2 * tp + dtp)  # trapezoid over the tied group
        tp += dtp
        fp += dfp
        fpr.append(fp / n_neg)
        tpr.append(tp / n_pos)
        thresholds.append(s_sorted[i])
        i = j
    auc = area2 / (2 * n_pos * n_neg)
    return RocReport(fpr=np.array(fpr), tpr=np.array(tpr),
                     thresholds=np.array(thresholds), auc=float(auc),
                     defined=True)


def best_f1_threshold(scores, labels) -> tuple[float, float]:
    """Pick the score threshold (alarm iff score >= thr) maximizing F1.

    Scans the unique-score sweep with cumulative confusion counts, so the
    cost is one sort.  Returns (threshold, f1); with single-class labels the
    F1 of the best achievable (all-clear or all-alarm) split is returned.
    """
    s = np.asarray(scores, dtype=float)
    y = _binary(labels, "labels")
    if s.shape[0] != y.shape[0]:
        raise ConfigError(f"scores ({s.shape[0]}) and labels ({y.shape[0]}) "
                          "must have equal length")
    n_pos = int(y.sum())
    if n_pos == 0:
        return float("inf"), 0.0
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = fp = 0
    best_f1 = 0.0
    best_thr = float("inf")
    i = 0
    n = s_sorted.shape[0]
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            tp += int(y_sorted[j])
            fp += int(1 - y_sorted[j])
            j += 1
        fn = n_pos - tp
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 0.0
        if f1 > best_f1:
            best_f1 = f1
            best_thr = s_sorted[i]
        i = j
    return float(best_thr), float(best_f1)
