"""Null-model pruning of mined feature groups.

Random saliency datasets model every feature as independently salient with
probability 1 - t, so a specific group of size s matches a random map with
probability (1-t)**s * t**(d-s). A real group survives only when its observed
frequency beats the per-dataset random frequency in all but a small fraction
of the K random datasets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .saliency import FeatureGroupSet


@dataclass(frozen=True)
class NullModelConfig:
    k_datasets: int = 5000
    t: float = 0.95
    alpha: float = 0.02  # pruning fraction of the K datasets
    seed: int = 0
    method: str = "binomial"  # "binomial" (fast, exact marginals) or "literal"

    def validate(self) -> None:
        if self.k_datasets < 1:
            raise ValueError("k_datasets must be positive")
        if not 0.0 < self.t < 1.0:
            raise ValueError("t must lie in (0, 1)")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.method not in ("binomial", "literal"):
            raise ValueError(f"unknown null-model method {self.method!r}")


def group_match_probability(group_size: int, d: int, t: float) -> float:
    """Probability that one random map's salient set equals a given group exactly."""
    return (1.0 - t) ** group_size * t ** (d - group_size)


def _literal_dataset_counts(
    rng: np.random.Generator, d: int, maps: int, t: float, targets: Sequence[tuple[int, ...]]
) -> np.ndarray:
    """Simulate one random dataset literally and count exact-set matches."""
    salient = rng.random((maps, d)) > t
    counts = np.zeros(len(targets), dtype=np.int64)
    if d <= 63:
        weights = 1 << np.arange(d, dtype=np.int64)
        keys = salient @ weights
        uniq, freq = np.unique(keys, return_counts=True)
        lookup = dict(zip(uniq.tolist(), freq.tolist()))
        for gi, g in enumerate(targets):
            counts[gi] = lookup.get(sum(1 << j for j in g), 0)
    else:
        seen: dict[tuple[int, ...], int] = {}
        for row in salient:
            key = tuple(np.flatnonzero(row))
            seen[key] = seen.get(key, 0) + 1
        for gi, g in enumerate(targets):
            counts[gi] = seen.get(tuple(g), 0)
    return counts


def random_group_frequencies(
    d: int,
    maps_per_dataset: int,
    k_datasets: int,
    t: float,
    seed: int,
    targets: Iterable[tuple[int, ...]],
    method: str = "binomial",
) -> dict[tuple[int, ...], np.ndarray]:
    """Per-target exact-match counts across K random datasets, shape (K,) each.

    ``binomial`` draws each dataset's count from Binomial(maps, p_group), which
    has the same marginal distribution as materializing the maps; ``literal``
    actually samples ``maps_per_dataset`` uniform maps per dataset. Dataset k
    always uses the derived seed (seed, k), so results do not depend on
    evaluation order.
    """
    targets = [tuple(g) for g in targets]
    if not targets:
        raise ValueError("targets must be non-empty")
    for g in targets:
        if len(g) == 0 or any(not 0 <= j < d for j in g):
            raise ValueError(f"invalid target group {g} for d={d}")
    if method not in ("binomial", "literal"):
        raise ValueError(f"unknown null-model method {method!r}")
    out = {g: np.zeros(k_datasets, dtype=np.int64) for g in targets}
    probs = [group_match_probability(len(g), d, t) for g in targets]
    for k in range(k_datasets):
        rng = np.random.default_rng([seed, k])
        if method == "binomial":
            for g, p in zip(targets, probs):
                out[g][k] = rng.binomial(maps_per_dataset, p)
        else:
            counts = _literal_dataset_counts(rng, d, maps_per_dataset, t, targets)
            for gi, g in enumerate(targets):
                out[g][k] = counts[gi]
    return out


@dataclass(frozen=True)
class PruneReport:
    """Per-group outcome of the null-model comparison."""

    group: tuple[int, ...]
    count: int
    exceedances: int
    survived: bool


def prune(real: FeatureGroupSet, config: NullModelConfig) -> tuple[FeatureGroupSet, list[PruneReport]]:
    """Drop groups whose real frequency is matched or beaten by too many null datasets.

    Group g survives iff the number of datasets k with f_{g,k} >= f_g is at
    most alpha * K. Counts of survivors are unchanged.
    """
    config.validate()
    if real.maps_total <= 0:
        raise ValueError("real group set has no processed maps")
    if not real.groups:
        return FeatureGroupSet({}, real.maps_total, real.feature_count), []
    freqs = random_group_frequencies(
        real.feature_count,
        real.maps_total,
        config.k_datasets,
        config.t,
        config.seed,
        real.groups.keys(),
        method=config.method,
    )
    threshold = math.floor(config.alpha * config.k_datasets + 1e-9)
    survivors: dict[tuple[int, ...], int] = {}
    reports = []
    for g, f_real in real.groups.items():
        exceed = int(np.count_nonzero(freqs[g] >= f_real))
        ok = exceed <= threshold
        if ok:
            survivors[g] = f_real
        reports.append(PruneReport(group=g, count=f_real, exceedances=exceed, survived=ok))
    return FeatureGroupSet(survivors, real.maps_total, real.feature_count), reports


def format_prune_report(reports: Sequence[PruneReport], survivors_only: bool = True) -> str:
    """Report lines ``members(1-based, comma-separated)<TAB>count<TAB>exceedances``."""
    lines = []
    for r in reports:
        if survivors_only and not r.survived:
            continue
        members = ",".join(str(j + 1) for j in r.group)
        lines.append(f"{members}\t{r.count}\t{r.exceedances}")
    return "\n".join(lines) + ("\n" if lines else "")
