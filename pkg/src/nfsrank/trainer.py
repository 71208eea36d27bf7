"""Mini-batch training of the reranker: Adam, standardization, checkpoints.

Training is sequential over batches and bit-reproducible given a seed: query
shuffling and dropout share one generator whose state travels with checkpoints,
so a resumed run continues exactly where the uninterrupted one would be.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore, metrics, reranker
from .data import DataError, Query, QuerySet
from .reranker import DivergenceError, ModelParams, RerankerConfig

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128  # queries per optimizer step
    learning_rate: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    shuffle_each_epoch: bool = True
    standardize: bool = True

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature training-corpus mean and (population) standard deviation."""

    mean: np.ndarray
    std: np.ndarray  # raw values; zero-variance features keep std 0 here

    @property
    def divisor(self) -> np.ndarray:
        return np.where(self.std == 0.0, 1.0, self.std)

    @classmethod
    def identity(cls, n_features: int) -> "FeatureStats":
        return cls(np.zeros(n_features), np.ones(n_features))


def standardize(qs: QuerySet) -> tuple[QuerySet, FeatureStats]:
    """Shift/scale every feature to mean 0, std 1 over the whole corpus.

    Zero-variance features map to 0 (a unit divisor is substituted). The
    returned statistics are meant to be reused verbatim on validation/test data.
    """
    stacked = np.concatenate([q.features for q in qs.queries], axis=0)
    stats = FeatureStats(stacked.mean(axis=0), stacked.std(axis=0))
    return apply_standardization(qs, stats), stats


def apply_standardization(qs: QuerySet, stats: FeatureStats) -> QuerySet:
    if stats.mean.shape != (qs.feature_count,):
        raise DataError(f"stats for {stats.mean.shape[0]} features, dataset has {qs.feature_count}")
    div = stats.divisor
    queries = tuple(
        Query(q.qid, (q.features - stats.mean) / div, q.labels.copy(), q.doc_ids) for q in qs.queries
    )
    return QuerySet(queries, qs.feature_count)


@dataclass
class AdamState:
    """First/second moment arrays mirroring the trainable parameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        keys = reranker.trainable_keys(params)
        return cls(
            m={k: np.zeros_like(params[k]) for k in keys},
            v={k: np.zeros_like(params[k]) for k in keys},
        )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update, in place on the trainable arrays."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    for key, g in grads.items():
        if g.shape != params[key].shape:
            raise DataError(f"gradient shape {g.shape} does not match parameter {key} {params[key].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {key}")
        state.m[key] += (1 - b1) * (g - state.m[key])
        state.v[key] += (1 - b2) * (g * g - state.v[key])
        m_hat = state.m[key] / (1 - b1**t)
        v_hat = state.v[key] / (1 - b2**t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if not np.all(np.isfinite(params[key])):
            raise DivergenceError(f"non-finite value in parameter {key} after update")
    return params, state


@dataclass
class TrainState:
    """Everything needed to resume training bit-exactly."""

    params: ModelParams
    adam: AdamState
    rng_state: dict
    epochs_done: int
    stats: FeatureStats


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    valid_ndcg3: float | None


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    stats: FeatureStats
    state: TrainState


def _query_grads(q: Query, params: ModelParams, config: RerankerConfig, rng: np.random.Generator):
    fp = reranker.build_forward(q.features, params, config, mode="train", rng=rng)
    loss = reranker.approx_ndcg_loss(fp.scores, q.labels, config.temperature)
    diffcore.backward(loss)
    return float(loss.value), {k: node.grad for k, node in fp.params.items()}


def train(
    qs_train: QuerySet,
    qs_valid: QuerySet | None,
    model_config: RerankerConfig,
    train_config: TrainConfig,
    init_state: TrainState | None = None,
) -> TrainResult:
    """Train the reranker, returning final parameters and per-epoch history.

    ``qs_valid`` adds a validation nDCG@3 column to the history; pass ``None``
    to skip it. ``init_state`` resumes a checkpointed run; ``train_config.epochs``
    is always the total epoch count.
    """
    train_config.validate()
    model_config.validate(qs_train.feature_count)
    if qs_valid is not None and qs_valid.feature_count != qs_train.feature_count:
        raise DataError("train and validation sets disagree on feature count")

    if init_state is not None:
        stats = init_state.stats
        params = init_state.params
        adam = init_state.adam
        rng = np.random.default_rng()
        rng.bit_generator.state = init_state.rng_state
        start_epoch = init_state.epochs_done
    else:
        if train_config.standardize:
            _, stats = standardize(qs_train)
        else:
            stats = FeatureStats.identity(qs_train.feature_count)
        params = reranker.init_params(
            model_config, qs_train.feature_count, np.random.default_rng([train_config.seed, 0])
        )
        adam = AdamState.zeros_like(params)
        rng = np.random.default_rng([train_config.seed, 1])
        start_epoch = 0

    std_train = apply_standardization(qs_train, stats)
    std_valid = apply_standardization(qs_valid, stats) if qs_valid is not None else None

    n = std_train.n_queries
    history: list[EpochRecord] = []
    for epoch in range(start_epoch, train_config.epochs):
        order = rng.permutation(n) if train_config.shuffle_each_epoch else np.arange(n)
        epoch_loss = 0.0
        for b0 in range(0, n, train_config.batch_size):
            batch = order[b0 : b0 + train_config.batch_size]
            grads = {k: np.zeros_like(params[k]) for k in reranker.trainable_keys(params)}
            for qi in batch:
                q = std_train.queries[qi]
                if not np.any(q.labels > 0):
                    continue  # exact-zero loss, no gradient
                loss_val, qgrads = _query_grads(q, params, model_config, rng)
                if not np.isfinite(loss_val):
                    raise DivergenceError(
                        f"loss diverged at epoch {epoch}, batch {b0 // train_config.batch_size}"
                    )
                epoch_loss += loss_val
                for k, g in qgrads.items():
                    grads[k] += g
            for k in grads:
                grads[k] /= len(batch)
            adam_step(
                params,
                grads,
                adam,
                train_config.learning_rate,
                (train_config.adam_beta1, train_config.adam_beta2),
                train_config.adam_eps,
            )
        valid_ndcg = None
        if std_valid is not None:
            scores = [reranker.score(q.features, params, model_config) for q in std_valid.queries]
            valid_ndcg = metrics.mean_ndcg_at_k(std_valid, scores, 3)
        history.append(EpochRecord(epoch=epoch, mean_loss=epoch_loss / n, valid_ndcg3=valid_ndcg))

    state = TrainState(
        params=params,
        adam=adam,
        rng_state=rng.bit_generator.state,
        epochs_done=train_config.epochs,
        stats=stats,
    )
    return TrainResult(params=params, history=history, stats=stats, state=state)


def evaluate(qs: QuerySet, params: ModelParams, config: RerankerConfig, stats: FeatureStats, k: int = 3) -> float:
    """Mean nDCG@k of the model on a raw (unstandardized) QuerySet."""
    std = apply_standardization(qs, stats)
    scores = [reranker.score(q.features, params, config) for q in std.queries]
    return metrics.mean_ndcg_at_k(std, scores, k)


@dataclass
class Checkpoint:
    model_config: RerankerConfig
    params: ModelParams
    stats: FeatureStats
    adam: AdamState | None
    rng_state: dict | None
    epochs_done: int

    def train_state(self) -> TrainState:
        if self.adam is None or self.rng_state is None:
            raise DataError("checkpoint carries no optimizer state; cannot resume")
        return TrainState(
            params=self.params,
            adam=self.adam,
            rng_state=self.rng_state,
            epochs_done=self.epochs_done,
            stats=self.stats,
        )


def save_checkpoint(
    path,
    model_config: RerankerConfig,
    params: ModelParams,
    stats: FeatureStats,
    train_state: TrainState | None = None,
) -> None:
    """Serialize config + parameters (+ optional resume state); round-trips bit-exactly."""
    arrays: dict[str, np.ndarray] = {f"param/{k}": v for k, v in params.items()}
    arrays["stats/mean"] = stats.mean
    arrays["stats/std"] = stats.std
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": asdict(model_config),
        "epochs_done": 0,
        "adam_step": None,
        "rng_state": None,
    }
    if train_state is not None:
        for k in train_state.adam.m:
            arrays[f"adam_m/{k}"] = train_state.adam.m[k]
            arrays[f"adam_v/{k}"] = train_state.adam.v[k]
        meta["adam_step"] = train_state.adam.step
        meta["rng_state"] = json.dumps(train_state.rng_state)
        meta["epochs_done"] = train_state.epochs_done
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta["format_version"] != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {meta['format_version']}")
        params = {k[len("param/") :]: data[k].copy() for k in data.files if k.startswith("param/")}
        stats = FeatureStats(data["stats/mean"].copy(), data["stats/std"].copy())
        adam = None
        if meta["adam_step"] is not None:
            adam = AdamState(
                m={k[len("adam_m/") :]: data[k].copy() for k in data.files if k.startswith("adam_m/")},
                v={k[len("adam_v/") :]: data[k].copy() for k in data.files if k.startswith("adam_v/")},
                step=meta["adam_step"],
            )
    rng_state = json.loads(meta["rng_state"]) if meta["rng_state"] else None
    return Checkpoint(
        model_config=RerankerConfig(**meta["model_config"]),
        params=params,
        stats=stats,
        adam=adam,
        rng_state=rng_state,
        epochs_done=meta["epochs_done"],
    )
