"""Binary classification metrics for outcome models.

AUROC is computed from tie-averaged ranks, which equals the probability
that a random positive outranks a random negative with ties counting one
half. AUPRC is average precision with tied scores grouped, so a score
vector with no information collapses to the positive prevalence. F1 uses
the usual harmonic mean with explicit zero conventions for empty
denominators.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

__all__ = [
    "MetricsError",
    "SingleClass",
    "MetricsReport",
    "auroc",
    "auprc",
    "f1_at",
    "evaluate",
]


class MetricsError(ValueError):
    """Base class for metric computation errors."""


class SingleClass(MetricsError):
    """Raised when a metric needs both classes but got only one."""


@dataclass
class MetricsReport:
    """Threshold metrics plus ranking metrics when they are computable."""

    f1: float
    precision: float
    recall: float
    n_pos: int
    n_neg: int
    threshold: float
    auroc: Optional[float] = None
    auprc: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise MetricsError(f"scores and labels differ in length: {scores.shape} vs {labels.shape}")
    if scores.size == 0:
        raise MetricsError("empty inputs")
    if not np.all(np.isfinite(scores)):
        raise MetricsError("non-finite scores")
    uniq = set(np.unique(labels).tolist())
    if not uniq <= {0, 1}:
        raise MetricsError(f"labels must be 0/1, found {sorted(uniq)}")
    return scores, labels.astype(np.int64)


def _tie_averaged_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's average rank."""
    uniq, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    average = (starts + ends + 1) / 2.0
    return average[inverse]


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic.

    Equals pairwise P(score_pos > score_neg) + 0.5 * P(tie) exactly.

    Raises:
        SingleClass: when labels are all 0 or all 1.
    """
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs at least one positive and one negative")
    ranks = _tie_averaged_ranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision with tied scores grouped at threshold boundaries.

    Raises:
        SingleClass: when there is no positive example.
    """
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise SingleClass("AUPRC needs at least one positive")

    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    predicted = np.arange(1, scores.size + 1)

    # A threshold boundary sits at the last element of each tie group.
    boundary = np.ones(scores.size, dtype=bool)
    boundary[:-1] = sorted_scores[:-1] != sorted_scores[1:]

    tp_b = tp[boundary].astype(np.float64)
    predicted_b = predicted[boundary].astype(np.float64)
    precision = tp_b / predicted_b
    recall_gain = np.diff(np.concatenate(([0.0], tp_b))) / n_pos
    return float(np.sum(recall_gain * precision))


def f1_at(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Precision, recall, and F1 for the decision rule ``score >= threshold``.

    Zero conventions: precision is 0 when nothing is predicted positive,
    recall is 0 when there are no positives, and F1 is 0 when precision and
    recall are both 0. Never raises on single-class inputs; the ranking
    fields of the report are left unset.
    """
    scores, labels = _validate(scores, labels)
    predictions = scores >= threshold
    tp = int(np.sum(predictions & (labels == 1)))
    fp = int(np.sum(predictions & (labels == 0)))
    fn = int(np.sum(~predictions & (labels == 1)))
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos

    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 0.0
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)

    return MetricsReport(
        f1=f1,
        precision=precision,
        recall=recall,
        n_pos=n_pos,
        n_neg=n_neg,
        threshold=threshold,
    )


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Full report: threshold metrics plus AUROC and AUPRC.

    Raises:
        SingleClass: when labels are all 0 or all 1, because the ranking
            metrics are undefined there.
    """
    report = f1_at(scores, labels, threshold)
    report.auroc = auroc(scores, labels)
    report.auprc = auprc(scores, labels)
    return report
