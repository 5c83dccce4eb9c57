"""Ranking evaluation: AUC, NDCG@K, Recall@K with binary relevance.

Per-user metrics are macro-averaged over users with at least one positive.
Score ties within a user's ranking break by ascending item index, which the
values depend on, so the rule is fixed here rather than left to the sort.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .data import ValidationError


def auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative;
    ties count one half (rank-sum form)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("need at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _topk_order(scores: np.ndarray, k: int) -> np.ndarray:
    # descending score, ties by ascending item index
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order[:k]


def ndcg_at_k(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Macro-averaged NDCG@k with log2 discount; users without positives
    are skipped. scores/labels are (n_users, n_items)."""
    return _ranked_metric(scores, labels, k, _user_ndcg)


def recall_at_k(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Macro-averaged hits@k / positives; users without positives skipped."""
    return _ranked_metric(scores, labels, k, _user_recall)


def _ranked_metric(scores, labels, k, per_user) -> float:
    if k < 1:
        raise ValidationError("k must be >= 1")
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels))
    vals = []
    for u in range(scores.shape[0]):
        pos = int((labels[u] == 1).sum())
        if pos == 0:
            continue
        vals.append(per_user(scores[u], labels[u], k, pos))
    if not vals:
        raise ValidationError("no users with positive labels")
    return float(np.mean(vals))


def _user_ndcg(scores, labels, k, n_pos) -> float:
    top = _topk_order(scores, k)
    discounts = 1.0 / np.log2(np.arange(2, top.shape[0] + 2))
    dcg = float(np.sum((labels[top] == 1) * discounts))
    ideal_hits = min(n_pos, top.shape[0])
    idcg = float(np.sum(discounts[:ideal_hits]))
    return dcg / idcg


def _user_recall(scores, labels, k, n_pos) -> float:
    top = _topk_order(scores, k)
    return float((labels[top] == 1).sum()) / n_pos
