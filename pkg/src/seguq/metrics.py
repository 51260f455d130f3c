"""Ranking and reporting metrics for the OOD benchmark."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMeasureError


def _midranks(values):
    """Ranks starting at 1; tied values share the mean of their ranks."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Rank-based AUROC (Mann-Whitney with midrank tie handling).

    labels: 0 for in-distribution, 1 for out-of-distribution.  Equals the
    probability that a random OOD score exceeds a random ID score, counting
    ties as one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n1 = int((labels == 1).sum())
    n0 = int((labels == 0).sum())
    if n0 == 0 or n1 == 0:
        raise UndefinedMeasureError("AUROC needs both classes present")
    ranks = _midranks(scores)
    u = ranks[labels == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n0 * n1))


@dataclass
class RatioRow:
    ood_set: str
    ratio: float
    flag_5pct: bool
    flag_10pct: bool
    n_id: int
    n_ood: int


def ratio_report(id_scores, ood_scores_by_set) -> list[RatioRow]:
    """Mean-OOD over mean-ID uncertainty ratios with 5% / 10% flags."""
    id_scores = np.asarray(id_scores, dtype=np.float64)
    if id_scores.size == 0:
        raise UndefinedMeasureError("empty ID score set")
    id_mean = id_scores.mean()
    rows = []
    for name, scores in ood_scores_by_set.items():
        scores = np.asarray(scores, dtype=np.float64)
        if scores.size == 0:
            raise UndefinedMeasureError(f"empty OOD score set {name!r}")
        ratio = float(scores.mean() / id_mean)
        rows.append(RatioRow(name, ratio, ratio >= 1.05, ratio >= 1.10,
                             id_scores.size, scores.size))
    return rows


def dice(pred_mask, true_mask) -> float:
    """Sanity-check Dice overlap between binary masks."""
    pred = np.asarray(pred_mask, dtype=bool)
    true = np.asarray(true_mask, dtype=bool)
    denom = pred.sum() + true.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(pred, true).sum() / denom)
