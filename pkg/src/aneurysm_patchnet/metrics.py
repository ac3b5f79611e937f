"""Classification metrics and the exact Wilcoxon signed-rank test."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class MetricsReport:
    """Confusion-matrix rates (percent, ``None`` when undefined) and ranking areas."""

    acc: float | None
    sens: float | None
    spec: float | None
    ppv: float | None
    npv: float | None
    auroc: float | None
    aupr: float | None
    n_pos: int
    n_neg: int
    threshold: float
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if len(s) != len(y) or len(s) == 0:
        raise ValidationError(f"scores and labels must be non-empty and equal length ({len(s)} vs {len(y)})")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def _pct(num: int, den: int) -> float | None:
    return 100.0 * num / den if den else None


def confusion_metrics(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Rates with a sample called positive when its score is strictly above ``threshold``.

    Precision is also reported as absent when there are no positive labels:
    it would be 0 for any false positive, which says nothing about detection.
    """
    s, y = _validate(scores, labels)
    pred = s > threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return MetricsReport(
        acc=_pct(tp + tn, len(y)), sens=_pct(tp, tp + fn), spec=_pct(tn, tn + fp),
        ppv=_pct(tp, tp + fp) if tp + fn else None, npv=_pct(tn, tn + fn), auroc=None, aupr=None,
        n_pos=tp + fn, n_neg=tn + fp, threshold=float(threshold), tp=tp, fp=fp, tn=tn, fn=fn)


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic (ties count one half)."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("ROC AUC needs both classes")
    ranks = _midranks(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def precision_recall_points(scores, labels):
    """Recall, precision and threshold at every distinct score, highest first."""
    s, y = _validate(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    pp = last + 1
    n_pos = int(y.sum())
    recall = tp / n_pos if n_pos else np.zeros(len(tp))
    return recall, tp / pp, s[last]


def pr_auc(scores, labels) -> float:
    """Average precision: ``sum_i (R_i - R_{i-1}) P_i`` over distinct thresholds."""
    s, y = _validate(scores, labels)
    if y.sum() == 0:
        raise DomainError("PR AUC needs at least one positive label")
    recall, precision, _ = precision_recall_points(s, y)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Confusion rates plus AUROC / AUPR (``None`` when a class is missing)."""
    base = confusion_metrics(scores, labels, threshold)
    s, y = _validate(scores, labels)
    auroc = roc_auc(s, y) if 0 < y.sum() < len(y) else None
    aupr = pr_auc(s, y) if y.sum() > 0 else None
    return MetricsReport(**{**asdict(base), "auroc": auroc, "aupr": aupr})


# --------------------------------------------------------------------------
# Wilcoxon signed-rank

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int

    def to_json(self) -> dict:
        return asdict(self)


def _null_distribution(doubled_ranks: np.ndarray) -> np.ndarray:
    """Counts of each achievable doubled W+ over all 2^n sign assignments."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(x, y=None) -> WilcoxonResult:
    """Exact two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped, tied magnitudes share average ranks and
    the null distribution of W+ is enumerated exactly (by convolution over
    the sign of each rank, equivalent to listing all 2^n assignments). The
    two-sided p-value is ``min(1, 2 min(P(W+ <= w), P(W+ >= w)))``.
    """
    d = np.asarray(x, dtype=np.float64).ravel()
    if y is not None:
        yy = np.asarray(y, dtype=np.float64).ravel()
        if yy.shape != d.shape:
            raise ValidationError("paired samples must have equal length")
        d = d - yy
    d = d[d != 0]
    if len(d) == 0:
        raise DomainError("all paired differences are zero")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    counts = _null_distribution(np.rint(2 * ranks))
    w2 = int(round(2 * w_plus))
    total = counts.sum()
    lower = counts[:w2 + 1].sum()
    upper = counts[w2:].sum()
    p = min(1.0, 2.0 * float(min(lower, upper)) / float(total))
    return WilcoxonResult(w_plus, p, len(d))
