"""Classification metrics, rank-based AUC, the Wilcoxon signed-rank test
with Win/Tie/Loss verdicts, and the rounds-to-target communication
efficiency measure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .errors import AllZeroDifferences, EmptyInput, LengthMismatch, SingleClass

SIGNIFICANCE_LEVEL = 0.05
EXACT_WILCOXON_MAX_N = 25
DEFAULT_THRESHOLD = 0.5


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    auc: float


@dataclass(frozen=True)
class SignificanceVerdict:
    p_value: float
    verdict: str  # Win / Tie / Loss


def confusion(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> ConfusionCounts:
    """Tally a confusion matrix; ties at the threshold predict defective."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.size == 0:
        raise LengthMismatch("scores and labels must be equal-length and non-empty")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def metrics(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(precision, recall, f1); any zero denominator yields 0."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def auc(scores, labels) -> float:
    """Mann-Whitney AUC via average ranks; ties count half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    """Exact two-sided p over all sign assignments.

    Uses the generating-polynomial count of rank-sum outcomes, which
    equals full 2^n enumeration; ranks are doubled so average ranks from
    ties stay integral.
    """
    doubled = np.rint(2 * ranks).astype(int)
    total = doubled.sum()
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    cdf = np.cumsum(counts)
    w2 = int(np.rint(2 * w_plus))
    p_low = cdf[w2] / counts.sum()
    p_high = (counts.sum() - (cdf[w2 - 1] if w2 > 0 else 0.0)) / counts.sum()
    return float(min(1.0, 2 * min(p_low, p_high)))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped; |differences| are ranked with average
    ranks for ties. Exact distribution up to n = 25, normal
    approximation with tie correction beyond that.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise LengthMismatch("paired samples must share a length of at least 2")
    diffs = a - b
    diffs = diffs[diffs != 0]
    n = diffs.size
    if n == 0:
        raise AllZeroDifferences("all paired differences are zero")
    ranks = rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    if n <= EXACT_WILCOXON_MAX_N:
        return _exact_two_sided_p(ranks, w_plus)
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24 - np.sum(tie_counts**3 - tie_counts) / 48
    # continuity-corrected z keeps the approximation within ~0.01 of exact
    z = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(variance)
    return float(min(1.0, 2 * norm.sf(z)))


def win_tie_loss(p_value: float, mean_ours: float, mean_baseline: float) -> SignificanceVerdict:
    if not 0.0 <= p_value <= 1.0:
        raise ValueError("p-value must lie in [0, 1]")
    if p_value < SIGNIFICANCE_LEVEL and mean_ours > mean_baseline:
        verdict = "Win"
    elif p_value < SIGNIFICANCE_LEVEL and mean_baseline > mean_ours:
        verdict = "Loss"
    else:
        verdict = "Tie"
    return SignificanceVerdict(p_value=p_value, verdict=verdict)


def rounds_to_target(f1_series: Sequence[float], target: float) -> Optional[int]:
    """Smallest 1-based round from which F1 stays at or above target for
    the rest of the horizon; None when the series never stabilizes."""
    series = np.asarray(f1_series, dtype=float)
    if series.size == 0:
        raise EmptyInput("f1 series is empty")
    below = np.flatnonzero(series < target)
    if below.size == 0:
        return 1
    first_stable = int(below[-1]) + 2  # one past the last dip, 1-based
    return first_stable if first_stable <= series.size else None


def aggregate_rounds(per_repeat: Sequence[Optional[int]], horizon: int) -> str:
    """Mean rounds-to-target over repeats; any censored repeat censors
    the whole cell (rendered like '>50')."""
    if any(r is None for r in per_repeat):
        return f">{horizon}"
    return f"{float(np.mean(per_repeat)):.1f}"
