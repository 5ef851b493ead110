"""Rank-based ROC AUC and the scored-example record."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError


@dataclass(frozen=True)
class ScoredExample:
    score: float
    label: int
    patient_id: str = ""
    visit: int = -1


def roc_auc(scores, labels):
    """Mann-Whitney AUC: P(random positive outscores random negative), ties count 1/2.

    Runs in O(n log n) using average ranks.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    pos = labels == 1
    if not np.all(pos | (labels == 0)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC is undefined with {n_pos} positive and {n_neg} negative examples")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc(examples):
    """AUC over a list of :class:`ScoredExample`."""
    examples = list(examples)
    return roc_auc([e.score for e in examples], [e.label for e in examples])


def mean_nll(probs, labels):
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-15, 1 - 1e-15)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))
