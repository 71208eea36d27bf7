"""Input-gradient saliency maps and their thresholded feature groups.

A document's saliency map is the absolute gradient of its own score with
respect to its own feature vector (other documents in the query influence the
score through attention, but only the document's row is read off), min-max
normalized to [0, 1]. Everything runs in eval mode: dropout off, running
batch-norm statistics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore, reranker
from .data import QuerySet
from .reranker import ModelParams, RerankerConfig


def _normalize(raw: np.ndarray) -> np.ndarray:
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)  # constant maps carry no contrast
    return (raw - lo) / (hi - lo)


def query_saliency_maps(params: ModelParams, config: RerankerConfig, docs: np.ndarray) -> np.ndarray:
    """Normalized saliency maps for every document of one query, stacked (docs, d).

    One forward pass, then one backward per document score.
    """
    docs = np.asarray(docs, dtype=np.float64)
    fp = reranker.build_forward(docs, params, config, mode="eval")
    maps = np.empty_like(docs)
    for i in range(docs.shape[0]):
        diffcore.backward(diffcore.slice_(fp.scores, i))
        maps[i] = _normalize(np.abs(fp.inputs.grad[i]))
    return maps


def saliency_map(params: ModelParams, config: RerankerConfig, docs: np.ndarray, doc_index: int) -> np.ndarray:
    """Normalized saliency map of one document within its query."""
    docs = np.asarray(docs, dtype=np.float64)
    if not 0 <= doc_index < docs.shape[0]:
        raise IndexError(f"doc_index {doc_index} out of range for {docs.shape[0]} documents")
    fp = reranker.build_forward(docs, params, config, mode="eval")
    diffcore.backward(diffcore.slice_(fp.scores, doc_index))
    return _normalize(np.abs(fp.inputs.grad[doc_index]))


def extract_group(saliency: np.ndarray, t: float) -> tuple[int, ...] | None:
    """Feature indices with saliency strictly above ``t``; None when empty."""
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold t must lie in (0, 1), got {t}")
    members = np.flatnonzero(np.asarray(saliency) > t)
    if members.size == 0:
        return None
    return tuple(int(j) for j in members)


@dataclass
class FeatureGroupSet:
    """Multiset of salient feature groups with occurrence counts.

    ``maps_total`` is the number of documents processed; documents whose map
    thresholds to the empty set contribute to ``maps_total`` but to no group,
    so the counts sum to at most ``maps_total``.
    """

    groups: dict[tuple[int, ...], int]
    maps_total: int
    feature_count: int

    def total_extractions(self) -> int:
        return sum(self.groups.values())


def mine_groups(params: ModelParams, config: RerankerConfig, qs: QuerySet, t: float) -> FeatureGroupSet:
    """Threshold every document's saliency map and aggregate identical groups.

    ``qs`` must already be in the model's input space (standardized if the
    model was trained on standardized features).
    """
    groups: dict[tuple[int, ...], int] = {}
    total = 0
    for q in qs.queries:
        maps = query_saliency_maps(params, config, q.features)
        for i in range(q.n_docs):
            total += 1
            g = extract_group(maps[i], t)
            if g is not None:
                groups[g] = groups.get(g, 0) + 1
    return FeatureGroupSet(groups=groups, maps_total=total, feature_count=qs.feature_count)


def dump_maps(params: ModelParams, config: RerankerConfig, qs: QuerySet) -> str:
    """Per-document dump, one line ``qid<TAB>doc<TAB>v1,v2,...,vd``."""
    lines = []
    for q in qs.queries:
        maps = query_saliency_maps(params, config, q.features)
        for i in range(q.n_docs):
            lines.append(f"{q.qid}\t{i}\t" + ",".join(f"{v:.6g}" for v in maps[i]))
    return "\n".join(lines) + "\n"
