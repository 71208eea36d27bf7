"""LETOR-format datasets: parsing, serialization, top-k restriction, synthetic oracles.

Queries are stored as dense per-query matrices (documents x features). Feature
ids are 1-based in files and 0-based everywhere in memory; writers convert back.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_LABEL = 31  # keeps 2**label gains finite in float64


class LetorParseError(ValueError):
    """Malformed LETOR input; message carries the offending line number."""


class DataError(ValueError):
    """Structurally invalid data (bad indices, mismatched shapes, ...)."""


@dataclass(frozen=True)
class Document:
    """One ranked item: a dense feature vector, a relevance grade, an optional id."""

    features: np.ndarray
    label: int
    doc_id: str | None = None


@dataclass(frozen=True)
class Query:
    """All documents sharing one qid, kept in file order."""

    qid: str
    features: np.ndarray  # (n_docs, n_features) float64
    labels: np.ndarray  # (n_docs,) int64, all >= 0
    doc_ids: tuple[str | None, ...] = ()

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise DataError(f"query {self.qid}: needs a non-empty 2-D feature matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError(f"query {self.qid}: labels do not match document count")
        if np.any(self.labels < 0):
            raise DataError(f"query {self.qid}: negative relevance label")
        if not self.doc_ids:
            object.__setattr__(self, "doc_ids", (None,) * self.features.shape[0])
        elif len(self.doc_ids) != self.features.shape[0]:
            raise DataError(f"query {self.qid}: doc_ids do not match document count")

    @property
    def n_docs(self) -> int:
        return self.features.shape[0]

    @property
    def documents(self) -> tuple[Document, ...]:
        return tuple(
            Document(self.features[i].copy(), int(self.labels[i]), self.doc_ids[i])
            for i in range(self.n_docs)
        )

    @classmethod
    def from_documents(cls, qid: str, docs: Sequence[Document]) -> "Query":
        feats = np.asarray([d.features for d in docs], dtype=np.float64)
        labels = np.asarray([d.label for d in docs], dtype=np.int64)
        return cls(qid, feats, labels, tuple(d.doc_id for d in docs))


@dataclass(frozen=True)
class QuerySet:
    """A ranking dataset: queries plus the dataset-wide feature count."""

    queries: tuple[Query, ...]
    feature_count: int

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        if self.feature_count <= 0:
            raise DataError("feature_count must be positive")
        seen = set()
        for q in self.queries:
            if q.qid in seen:
                raise DataError(f"duplicate qid {q.qid!r}")
            seen.add(q.qid)
            if q.features.shape[1] != self.feature_count:
                raise DataError(
                    f"query {q.qid}: has {q.features.shape[1]} features, expected {self.feature_count}"
                )

    @property
    def n_queries(self) -> int:
        return len(self.queries)

    @property
    def n_docs(self) -> int:
        return sum(q.n_docs for q in self.queries)

    def query(self, qid: str) -> Query:
        for q in self.queries:
            if q.qid == qid:
                return q
        raise KeyError(qid)


def equal_querysets(a: QuerySet, b: QuerySet) -> bool:
    """Exact field equality, bit-level on arrays."""
    if a.feature_count != b.feature_count or a.n_queries != b.n_queries:
        return False
    for qa, qb in zip(a.queries, b.queries):
        if qa.qid != qb.qid or qa.doc_ids != qb.doc_ids:
            return False
        if not np.array_equal(qa.labels, qb.labels):
            return False
        if not np.array_equal(qa.features, qb.features):
            return False
    return True


def parse_letor(text: str | Iterable[str]) -> QuerySet:
    """Parse LETOR/SVMLight-style lines ``<label> qid:<qid> <fid>:<val> ... [# comment]``.

    Documents are grouped by qid preserving file order, missing feature ids fill
    with 0.0 and the feature count is the maximum 1-based id observed.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    rows: list[tuple[str, int, dict[int, float], str | None]] = []
    max_fid = 0
    n_seen = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        doc_id = None
        if "#" in line:
            line, comment = line.split("#", 1)
            doc_id = comment.strip() or None
        tokens = line.split()
        if not tokens:
            continue
        n_seen += 1
        if len(tokens) < 2 or not tokens[1].startswith("qid:"):
            raise LetorParseError(f"line {lineno}: expected '<label> qid:<qid> ...'")
        try:
            label_f = float(tokens[0])
        except ValueError:
            raise LetorParseError(f"line {lineno}: non-numeric label {tokens[0]!r}") from None
        if label_f < 0 or label_f != int(label_f):
            raise LetorParseError(f"line {lineno}: label must be a non-negative integer")
        label = int(label_f)
        if label > MAX_LABEL:
            warnings.warn(
                f"line {lineno}: label {label} capped at {MAX_LABEL} to keep 2**label finite",
                stacklevel=2,
            )
            label = MAX_LABEL
        qid = tokens[1][len("qid:") :]
        if not qid:
            raise LetorParseError(f"line {lineno}: empty qid")
        feats: dict[int, float] = {}
        for tok in tokens[2:]:
            fid_s, _, val_s = tok.partition(":")
            try:
                fid = int(fid_s)
                val = float(val_s)
            except ValueError:
                raise LetorParseError(f"line {lineno}: malformed feature token {tok!r}") from None
            if fid < 1:
                raise LetorParseError(f"line {lineno}: feature ids are 1-based, got {fid}")
            feats[fid] = val
            max_fid = max(max_fid, fid)
        rows.append((qid, label, feats, doc_id))
    if n_seen == 0:
        raise LetorParseError("empty input: no data lines found")
    if max_fid == 0:
        raise LetorParseError("no features found in input")

    by_qid: dict[str, list[tuple[int, dict[int, float], str | None]]] = {}
    order: list[str] = []
    for qid, label, feats, doc_id in rows:
        if qid not in by_qid:
            by_qid[qid] = []
            order.append(qid)
        by_qid[qid].append((label, feats, doc_id))

    queries = []
    for qid in order:
        docs = by_qid[qid]
        mat = np.zeros((len(docs), max_fid), dtype=np.float64)
        labels = np.zeros(len(docs), dtype=np.int64)
        ids: list[str | None] = []
        for i, (label, feats, doc_id) in enumerate(docs):
            for fid, val in feats.items():
                mat[i, fid - 1] = val
            labels[i] = label
            ids.append(doc_id)
        queries.append(Query(qid, mat, labels, tuple(ids)))
    return QuerySet(tuple(queries), max_fid)


def serialize_letor(qs: QuerySet) -> str:
    """Write a QuerySet back to LETOR text; ``parse_letor`` round-trips it exactly."""
    out: list[str] = []
    for q in qs.queries:
        for i in range(q.n_docs):
            vals = " ".join(f"{j + 1}:{float(q.features[i, j])!r}" for j in range(qs.feature_count))
            line = f"{int(q.labels[i])} qid:{q.qid} {vals}"
            if q.doc_ids[i] is not None:
                line += f" # {q.doc_ids[i]}"
            out.append(line)
    return "\n".join(out) + "\n"


def restrict_topk(qs: QuerySet, candidates: Mapping[str, Sequence[int]], k: int) -> QuerySet:
    """Keep at most ``k`` documents per query, in candidate order.

    Queries absent from ``candidates`` are kept whole. Indices are 0-based
    positions within the query's document list.
    """
    if k <= 0:
        raise DataError("k must be positive")
    queries = []
    for q in qs.queries:
        if q.qid not in candidates:
            queries.append(q)
            continue
        idx = list(candidates[q.qid])[:k]
        for i in idx:
            if not 0 <= i < q.n_docs:
                raise DataError(f"query {q.qid}: candidate index {i} out of range (0..{q.n_docs - 1})")
        sel = np.asarray(idx, dtype=np.int64)
        queries.append(
            Query(q.qid, q.features[sel].copy(), q.labels[sel].copy(), tuple(q.doc_ids[i] for i in idx))
        )
    return QuerySet(tuple(queries), qs.feature_count)


def parse_candidates(text: str) -> dict[str, list[int]]:
    """Parse candidate lists: one line per query, ``qid<TAB>idx,idx,...`` (0-based)."""
    out: dict[str, list[int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split(None, 1)
        if len(parts) != 2:
            raise LetorParseError(f"line {lineno}: expected 'qid<TAB>idx,idx,...'")
        qid, idx_s = parts
        try:
            out[qid.strip()] = [int(tok) for tok in idx_s.strip().split(",") if tok != ""]
        except ValueError:
            raise LetorParseError(f"line {lineno}: non-integer candidate index") from None
    return out


@dataclass(frozen=True)
class FeatureRole:
    """Ground-truth role of one synthetic feature."""

    kind: str  # "informative" | "duplicate" | "noise"
    parent: int | None = None  # informative feature index for duplicates

    def __str__(self) -> str:
        return self.kind if self.parent is None else f"{self.kind}:{self.parent}"


def generate_synthetic(
    seed: int,
    n_queries: int,
    docs_per_query: int,
    informative: int,
    duplicates_per_informative: int,
    noise: int,
    n_grades: int = 5,
    label_noise: float = 0.1,
    duplicate_noise: float = 0.1,
) -> tuple[QuerySet, list[FeatureRole]]:
    """Build a synthetic ranking dataset with known feature roles.

    Labels are a quantile binning of the mean of the informative features plus
    bounded uniform noise; each duplicate is a positive affine rescaling of a
    lightly jittered copy of its parent (rank-equal up to noise, Spearman
    > 0.99 at the default jitter); noise features are label-independent.
    The jitter matters: it makes averaging a family of duplicates strictly
    better than reading one member, so a well-trained model spreads weight
    over whole families instead of picking an arbitrary representative.
    Feature layout is the informative block, then duplicates grouped by
    parent, then noise. Deterministic given ``seed``; generating more queries
    with the same seed extends the set without changing the existing ones.
    """
    if min(n_queries, docs_per_query, informative) < 1:
        raise DataError("n_queries, docs_per_query and informative must be positive")
    if duplicates_per_informative < 0 or noise < 0:
        raise DataError("duplicates_per_informative and noise must be >= 0")
    dups = duplicates_per_informative
    d = informative * (1 + dups) + noise

    coeff_rng = np.random.default_rng([seed, 0])
    scale = coeff_rng.uniform(0.5, 2.0, size=(informative, dups)) if dups else np.zeros((informative, 0))
    shift = coeff_rng.uniform(-1.0, 1.0, size=(informative, dups)) if dups else np.zeros((informative, 0))

    roles = [FeatureRole("informative") for _ in range(informative)]
    for i in range(informative):
        roles.extend(FeatureRole("duplicate", parent=i) for _ in range(dups))
    roles.extend(FeatureRole("noise") for _ in range(noise))

    queries = []
    for qi in range(n_queries):
        rng = np.random.default_rng([seed, 1 + qi])
        base = rng.normal(size=(docs_per_query, informative))
        z = base.mean(axis=1) + rng.uniform(-label_noise, label_noise, size=docs_per_query)
        # dense grades: rank position within the query, binned into n_grades levels
        pos = np.empty(docs_per_query, dtype=np.int64)
        pos[np.argsort(z, kind="stable")] = np.arange(docs_per_query)
        labels = (pos * n_grades) // docs_per_query

        cols = [base]
        for i in range(informative):
            if dups:
                jitter = rng.normal(size=(docs_per_query, dups)) * duplicate_noise
                cols.append((base[:, [i]] + jitter) * scale[i] + shift[i])
        if noise:
            cols.append(rng.normal(size=(docs_per_query, noise)))
        feats = np.concatenate(cols, axis=1)
        queries.append(Query(f"q{qi + 1}", feats, labels))

    qs = QuerySet(tuple(queries), d)
    return qs, roles
