"""Feature selection from surviving groups: similarity, clustering, representatives.

Feature-pair similarity is a count-weighted Jaccard over group co-occurrence;
single-linkage agglomerative clustering (max pairwise similarity, deterministic
smallest-id tie-breaking) runs down to a target cluster count; each cluster
keeps its most frequently occurring feature.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import groupmine, saliency, trainer
from .data import QuerySet
from .groupmine import NullModelConfig
from .reranker import RerankerConfig
from .saliency import FeatureGroupSet
from .trainer import TrainConfig


class EmptyGroupSetError(ValueError):
    """No salient groups to select from (before or after pruning)."""


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric feature-feature similarity in [0, 1] with unit diagonal.

    ``active`` lists features appearing in at least one group (the only ones
    eligible for clustering); ``appearances`` counts, per feature, the total
    weight of groups containing it.
    """

    matrix: np.ndarray
    active: tuple[int, ...]
    appearances: np.ndarray

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("similarity matrix must be square")
        if np.abs(m - m.T).max() > 1e-12:
            raise ValueError("similarity matrix must be symmetric")


def similarity(groups: FeatureGroupSet) -> SimilarityMatrix:
    """Count-weighted Jaccard similarity: co(a,b) / (app(a) + app(b) - co(a,b)).

    Features absent from every group have similarity 0 to everything and are
    excluded from ``active``.
    """
    if not groups.groups:
        raise EmptyGroupSetError("cannot build a similarity matrix from an empty group set")
    d = groups.feature_count
    app = np.zeros(d, dtype=np.int64)
    co = np.zeros((d, d), dtype=np.int64)
    for g, count in groups.groups.items():
        for a in g:
            app[a] += count
        for a, b in combinations(g, 2):
            co[a, b] += count
            co[b, a] += count
    sim = np.zeros((d, d), dtype=np.float64)
    active = np.flatnonzero(app > 0)
    for a, b in combinations(active.tolist(), 2):
        union = app[a] + app[b] - co[a, b]
        if co[a, b]:
            sim[a, b] = sim[b, a] = co[a, b] / union
    np.fill_diagonal(sim, 1.0)
    return SimilarityMatrix(matrix=sim, active=tuple(int(a) for a in active), appearances=app)


def single_linkage(sim: SimilarityMatrix, n_clusters: int) -> list[tuple[int, ...]]:
    """Agglomerate active features down to ``n_clusters`` clusters.

    Each step merges the cluster pair with the largest single-linkage
    similarity (max over cross pairs); ties pick the pair with the smallest
    (min id of first cluster, min id of second cluster). Returns clusters as
    sorted tuples, ordered by their smallest member.
    """
    if n_clusters < 1:
        raise ValueError("n_clusters must be positive")
    if n_clusters > len(sim.active):
        raise ValueError(f"n_clusters={n_clusters} exceeds {len(sim.active)} active features")
    clusters: list[list[int]] = [[a] for a in sim.active]
    m = sim.matrix
    while len(clusters) > n_clusters:
        best = None  # (-similarity, min_a, min_b, ia, ib)
        for ia, ib in combinations(range(len(clusters)), 2):
            ca, cb = clusters[ia], clusters[ib]
            link = max(m[a, b] for a in ca for b in cb)
            lo, hi = (ca[0], cb[0]) if ca[0] < cb[0] else (cb[0], ca[0])
            key = (-link, lo, hi)
            if best is None or key < best[0]:
                best = (key, ia, ib)
        _, ia, ib = best
        clusters[ia] = sorted(clusters[ia] + clusters[ib])
        del clusters[ib]
    return sorted((tuple(c) for c in clusters), key=lambda c: c[0])


@dataclass(frozen=True)
class FeatureProvenance:
    cluster_index: int
    frequency: int
    rule: str  # "singleton" | "max_frequency" | "tie_smallest_id"


@dataclass
class SelectionResult:
    """Selected features with how each one earned its place."""

    kept: list[int]  # 0-based feature indices, order defined by the method
    clusters: list[tuple[int, ...]]
    frequency: dict[int, int]
    provenance: dict[int, FeatureProvenance] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    method: str = ""


def pick_representatives(partition: list[tuple[int, ...]], appearances: np.ndarray) -> SelectionResult:
    """One feature per cluster: highest group frequency, ties to the smallest id."""
    kept = []
    provenance = {}
    for ci, cluster in enumerate(partition):
        if not cluster:
            raise ValueError(f"cluster {ci} is empty")
        freqs = [int(appearances[f]) for f in cluster]
        top = max(freqs)
        winners = [f for f, fr in zip(cluster, freqs) if fr == top]
        rep = min(winners)
        if len(cluster) == 1:
            rule = "singleton"
        elif len(winners) > 1:
            rule = "tie_smallest_id"
        else:
            rule = "max_frequency"
        kept.append(rep)
        provenance[rep] = FeatureProvenance(cluster_index=ci, frequency=top, rule=rule)
    kept.sort()
    freq = {int(f): int(appearances[f]) for cluster in partition for f in cluster}
    return SelectionResult(kept=kept, clusters=list(partition), frequency=freq, provenance=provenance)


def nfs_select(
    qs_train: QuerySet,
    model_config: RerankerConfig,
    train_config: TrainConfig,
    null_config: NullModelConfig,
    n_keep: int,
    qs_valid: QuerySet | None = None,
) -> SelectionResult:
    """Full neural feature selection: train, mine saliency groups, prune, cluster.

    Returns at most ``n_keep`` features; when fewer features survive pruning, all
    survivors are kept and a shortfall warning is attached to the result.
    """
    if n_keep < 1:
        raise ValueError("n_keep must be positive")
    result = trainer.train(qs_train, qs_valid, model_config, train_config)
    qs_std = trainer.apply_standardization(qs_train, result.stats)
    mined = saliency.mine_groups(result.params, model_config, qs_std, null_config.t)
    if not mined.groups:
        raise EmptyGroupSetError("no document produced a salient feature group")
    survivors, _ = groupmine.prune(mined, null_config)
    if not survivors.groups:
        raise EmptyGroupSetError("every mined group was pruned as noise")
    sim = similarity(survivors)
    notes = []
    n_clusters = n_keep
    if len(sim.active) < n_keep:
        notes.append(
            f"requested {n_keep} features but only {len(sim.active)} survived pruning; keeping all survivors"
        )
        n_clusters = len(sim.active)
    partition = single_linkage(sim, n_clusters)
    selection = pick_representatives(partition, sim.appearances)
    selection.warnings.extend(notes)
    selection.method = "nfs"
    for note in notes:
        warnings.warn(note, stacklevel=2)
    return selection
