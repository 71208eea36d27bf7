"""Reference feature-selection methods: GAS, HCAS and XGAS.

GAS greedily trades per-feature ranking importance against Kendall-tau
redundancy; HCAS clusters the absolute-Spearman similarity matrix with single
linkage and keeps the most important feature per cluster; XGAS is GAS with
externally supplied (e.g. gradient-boosted-model) importance scores.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.stats

from . import metrics, select
from .data import DataError, QuerySet
from .metrics import ConstantInputWarning
from .select import SelectionResult, SimilarityMatrix

DEFAULT_SUBSAMPLE = 50_000  # pooled-document cap for pairwise correlations
DEFAULT_TRADEOFF = 0.01  # GAS importance/similarity trade-off constant


def pooled_documents(qs: QuerySet, subsample: int = DEFAULT_SUBSAMPLE, seed: int = 0) -> np.ndarray:
    """All documents stacked (n, d), uniformly subsampled when too many."""
    stacked = np.concatenate([q.features for q in qs.queries], axis=0)
    if subsample and stacked.shape[0] > subsample:
        rng = np.random.default_rng([seed, 97])
        keep = np.sort(rng.choice(stacked.shape[0], size=subsample, replace=False))
        stacked = stacked[keep]
    return stacked


def single_feature_importance(qs: QuerySet, k: int = 3, metric: str = "ndcg") -> np.ndarray:
    """Mean ranking quality when each feature alone scores the documents.

    The better of the ascending/descending orientation is taken per feature,
    so a feature equal to minus the label is as important as the label itself.
    """
    if metric not in ("ndcg", "map"):
        raise ValueError(f"metric must be 'ndcg' or 'map', got {metric!r}")
    d = qs.feature_count
    importance = np.zeros(d)
    for j in range(d):
        by_orientation = []
        for sign in (1.0, -1.0):
            if metric == "ndcg":
                val = metrics.mean_ndcg_at_k(qs, [sign * q.features[:, j] for q in qs.queries], k)
            else:
                vals = [
                    metrics.average_precision(q.labels, sign * q.features[:, j])
                    for q in qs.queries
                    if np.any(q.labels > 0)
                ]
                val = float(np.mean(vals)) if vals else 0.0
            by_orientation.append(val)
        importance[j] = max(by_orientation)
    return importance


def _abs_kendall_matrix(docs: np.ndarray) -> np.ndarray:
    d = docs.shape[1]
    sim = np.eye(d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConstantInputWarning)
        for a in range(d):
            for b in range(a + 1, d):
                sim[a, b] = sim[b, a] = abs(metrics.kendall_tau(docs[:, a], docs[:, b]))
    return sim


def _abs_spearman_matrix(docs: np.ndarray) -> np.ndarray:
    d = docs.shape[1]
    if d == 1:
        return np.eye(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = scipy.stats.spearmanr(docs).statistic
    rho = np.atleast_2d(rho)
    sim = np.abs(np.nan_to_num(rho, nan=0.0))  # constant features correlate with nothing
    np.fill_diagonal(sim, 1.0)
    return sim


def _greedy_similarity_selection(
    importance: np.ndarray, sim: np.ndarray, n_keep: int, c: float, method: str
) -> SelectionResult:
    scores = importance.astype(np.float64).copy()
    kept: list[int] = []
    for _ in range(n_keep):
        masked = scores.copy()
        masked[kept] = -np.inf
        picked = int(np.argmax(masked))  # ties resolve to the smallest id
        kept.append(picked)
        remaining = np.setdiff1d(np.arange(len(scores)), kept, assume_unique=False)
        scores[remaining] -= 2.0 * c * sim[picked, remaining]
    return SelectionResult(kept=kept, clusters=[], frequency={}, method=method)


def gas_select(
    qs: QuerySet,
    k: int = 3,
    n_keep: int = 10,
    c: float = DEFAULT_TRADEOFF,
    metric: str = "ndcg",
    subsample: int = DEFAULT_SUBSAMPLE,
    seed: int = 0,
) -> SelectionResult:
    """Greedy selection maximizing importance, penalizing |Kendall tau| redundancy.

    After each pick, every unpicked feature's importance drops by
    2 * c * sim(picked, feature). ``kept`` preserves the greedy pick order.
    """
    _check_keep(qs, n_keep)
    if c < 0:
        raise ValueError("tradeoff constant c must be >= 0")
    importance = single_feature_importance(qs, k, metric)
    sim = _abs_kendall_matrix(pooled_documents(qs, subsample, seed))
    return _greedy_similarity_selection(importance, sim, n_keep, c, method="gas")


def hcas_select(
    qs: QuerySet,
    n_keep: int = 10,
    k: int = 3,
    subsample: int = DEFAULT_SUBSAMPLE,
    seed: int = 0,
) -> SelectionResult:
    """Single-linkage clustering of |Spearman| similarity, best feature per cluster.

    Cluster representatives maximize single-feature nDCG@k, ties to the
    smallest feature id; ``kept`` is sorted ascending.
    """
    _check_keep(qs, n_keep)
    docs = pooled_documents(qs, subsample, seed)
    sim = _abs_spearman_matrix(docs)
    simmat = SimilarityMatrix(
        matrix=sim, active=tuple(range(qs.feature_count)), appearances=np.ones(qs.feature_count, dtype=np.int64)
    )
    partition = select.single_linkage(simmat, n_keep)
    importance = single_feature_importance(qs, k, "ndcg")
    kept = []
    for cluster in partition:
        vals = importance[list(cluster)]
        kept.append(int(cluster[int(np.argmax(vals))]))
    kept.sort()
    return SelectionResult(kept=kept, clusters=partition, frequency={}, method="hcas")


def xgas_select(
    qs: QuerySet,
    importances: np.ndarray,
    k: int = 3,
    n_keep: int = 10,
    c: float = DEFAULT_TRADEOFF,
    subsample: int = DEFAULT_SUBSAMPLE,
    seed: int = 0,
) -> SelectionResult:
    """GAS with externally supplied importance scores (e.g. LambdaMART gains)."""
    _check_keep(qs, n_keep)
    importances = np.asarray(importances, dtype=np.float64)
    if importances.shape != (qs.feature_count,):
        raise DataError(
            f"importances length {importances.shape} does not match feature count {qs.feature_count}"
        )
    sim = _abs_kendall_matrix(pooled_documents(qs, subsample, seed))
    result = _greedy_similarity_selection(importances, sim, n_keep, c, method="xgas")
    return result


def parse_importance_file(text: str, feature_count: int) -> np.ndarray:
    """Parse ``fid<TAB>value`` lines (1-based ids); ids absent from the file get 0."""
    out = np.zeros(feature_count)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"line {lineno}: expected 'fid<TAB>value'")
        try:
            fid = int(parts[0])
            val = float(parts[1])
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric importance entry") from None
        if not 1 <= fid <= feature_count:
            raise DataError(f"line {lineno}: feature id {fid} outside 1..{feature_count}")
        out[fid - 1] = val
    return out


def _check_keep(qs: QuerySet, n_keep: int) -> None:
    if not 1 <= n_keep <= qs.feature_count:
        raise ValueError(f"n_keep must lie in 1..{qs.feature_count}, got {n_keep}")
