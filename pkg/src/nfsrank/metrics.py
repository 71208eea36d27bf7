"""Ranking metrics (DCG/nDCG@k, average precision) and rank correlations.

Conventions: gain 2**label - 1, discount 1/log2(rank + 1), score ties broken by
ascending original index, all-zero-label queries score 0 and are excluded from
means. Correlations fall back to 0.0 (with a warning) on constant input.
"""
from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np
import scipy.stats

from .data import QuerySet


class ConstantInputWarning(UserWarning):
    """A correlation was requested on a constant sequence; 0.0 was returned."""


def _rank_order(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by score descending, ties by ascending original index."""
    return np.lexsort((np.arange(len(scores)), -scores))


def _dcg(gains_in_rank_order: np.ndarray, k: int) -> float:
    top = gains_in_rank_order[:k]
    discounts = np.log2(np.arange(2, len(top) + 2, dtype=np.float64))
    return float(np.sum(top / discounts))


def ndcg_at_k(labels: Sequence[int], scores: Sequence[float], k: int) -> float:
    """nDCG@k of one ranked list; 0.0 when no document is relevant."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1 or len(labels) == 0:
        raise ValueError(f"labels/scores length mismatch: {labels.shape} vs {scores.shape}")
    if k < 1:
        raise ValueError("k must be positive")
    gains = np.power(2.0, labels) - 1.0
    ideal = _dcg(np.sort(gains)[::-1], k)
    if ideal == 0.0:
        return 0.0
    return _dcg(gains[_rank_order(scores)], k) / ideal


def mean_ndcg_at_k(qs: QuerySet, scores: Sequence[np.ndarray], k: int) -> float:
    """Mean nDCG@k over queries that have at least one relevant document."""
    if len(scores) != qs.n_queries:
        raise ValueError(f"scores for {len(scores)} queries, dataset has {qs.n_queries}")
    vals = []
    for q, s in zip(qs.queries, scores):
        s = np.asarray(s, dtype=np.float64)
        if s.shape != (q.n_docs,):
            raise ValueError(f"query {q.qid}: scores missing or wrong length")
        if np.any(q.labels > 0):
            vals.append(ndcg_at_k(q.labels, s, k))
    return float(np.mean(vals)) if vals else 0.0


def average_precision(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Average precision with binary relevance label > 0; 0.0 with no relevant docs."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ValueError(f"labels/scores length mismatch: {labels.shape} vs {scores.shape}")
    rel = (labels[_rank_order(scores)] > 0).astype(np.float64)
    n_rel = rel.sum()
    if n_rel == 0:
        return 0.0
    precision_at_hits = np.cumsum(rel) / np.arange(1, len(rel) + 1)
    return float(np.sum(precision_at_hits * rel) / n_rel)


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError(f"need two equal-length sequences of >= 2 values, got {x.shape} and {y.shape}")
    return x, y


def _constant(v: np.ndarray) -> bool:
    return bool(np.all(v == v[0]))


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-corrected Kendall tau-b; constant input yields 0.0 with a warning."""
    x, y = _check_pair(x, y)
    if _constant(x) or _constant(y):
        warnings.warn("kendall_tau undefined on constant input, returning 0.0", ConstantInputWarning, stacklevel=2)
        return 0.0
    return float(scipy.stats.kendalltau(x, y).statistic)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation (Pearson of mean ranks); 0.0 on constant input."""
    x, y = _check_pair(x, y)
    if _constant(x) or _constant(y):
        warnings.warn("spearman undefined on constant input, returning 0.0", ConstantInputWarning, stacklevel=2)
        return 0.0
    return float(scipy.stats.spearmanr(x, y).statistic)
