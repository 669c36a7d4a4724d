"""Score-set evaluation: ROC curves, AUC, and TPR at a fixed empirical FPR.

Scores are oriented so that larger means more watermarked (callers pass -phi
or -p_value). AUC is the probability that a random positive outscores a
random negative, ties counted half, computed from ranks.
"""

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class RocSummary:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float
    tpr_at_fpr01: float

    def to_record(self) -> dict:
        return {
            "auc": self.auc,
            "tpr_at_fpr01": self.tpr_at_fpr01,
            "thresholds": self.thresholds.tolist(),
            "tpr": self.tpr.tolist(),
            "fpr": self.fpr.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())


def auc_score(pos, neg) -> float:
    """Rank-based P(pos > neg) with ties counted 1/2."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one score on each side")
    merged = np.concatenate([pos, neg])
    order = np.argsort(merged, kind="stable")
    ranks = np.empty(merged.size, dtype=np.float64)
    ranks[order] = np.arange(1, merged.size + 1)
    # average ranks over ties
    sorted_vals = merged[order]
    i = 0
    while i < merged.size:
        j = i
        while j + 1 < merged.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[: pos.size].sum()
    u = rank_sum - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def tpr_at_fpr(pos, neg, fpr: float = 0.01) -> float:
    """TPR at the largest threshold whose empirical FPR stays <= fpr.

    The threshold is the (floor(fpr * #neg) + 1)-th largest negative score
    and classification is strict (score > threshold), so at most that many
    negatives are ever flagged.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one score on each side")
    allowed = int(np.floor(fpr * neg.size))
    if allowed >= neg.size:
        return 1.0
    threshold = np.sort(neg)[::-1][allowed]
    return float(np.mean(pos > threshold))


def roc_auc(pos, neg) -> RocSummary:
    """Full threshold sweep plus AUC and TPR at 1% empirical FPR."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one score on each side")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    tpr = np.array([(pos > t).mean() for t in thresholds] + [1.0])
    fpr = np.array([(neg > t).mean() for t in thresholds] + [1.0])
    thresholds = np.concatenate([thresholds, [-np.inf]])
    return RocSummary(
        thresholds=thresholds,
        tpr=tpr,
        fpr=fpr,
        auc=auc_score(pos, neg),
        tpr_at_fpr01=tpr_at_fpr(pos, neg, 0.01),
    )
