"""Attention-based reranker scoring a query's document list, plus its listwise loss.

Architecture: a per-feature transformation layer (learned convex combination of
identity, signed-log1p and softsign, optionally projected to an embedding
width), a stack of multi-head self-attention layers over the documents of one
query, then two fully-connected layers producing one score per document. Batch
normalization is applied to the input of each fully-connected layer and dropout
to the output of each hidden layer (train mode only). No positional encoding:
document lists are order-free, so eval-mode scoring is permutation-equivariant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .diffcore import Node

BN_EPS = 1e-5

ModelParams = dict[str, np.ndarray]


class DivergenceError(FloatingPointError):
    """Non-finite value produced by the model; training has diverged."""


@dataclass(frozen=True)
class RerankerConfig:
    n_attention_layers: int = 1
    n_heads: int = 1
    feature_embedding: int = 0  # 0 disables the embedding projection
    hidden_size: int = 128
    dropout_p: float = 0.5
    bn_momentum: float = 0.4  # weight of the current batch statistics
    temperature: float = 0.1  # smoothing of the rank approximation in the loss

    def width(self, n_features: int) -> int:
        """Model width: the embedding size when enabled, else the feature count."""
        return self.feature_embedding if self.feature_embedding > 0 else n_features

    def validate(self, n_features: int) -> None:
        if self.n_attention_layers < 1 or self.n_heads < 1 or self.hidden_size < 1:
            raise ValueError("layer, head and hidden sizes must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ValueError("bn_momentum must be in (0, 1)")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        w = self.width(n_features)
        if w % self.n_heads != 0:
            raise ValueError(f"model width {w} is not divisible by n_heads={self.n_heads}")


def _xavier(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def init_params(config: RerankerConfig, n_features: int, rng: np.random.Generator) -> ModelParams:
    """Fresh parameter arrays; draw order is fixed so a seed pins every weight."""
    config.validate(n_features)
    w = config.width(n_features)
    params: ModelParams = {"transform.logits": np.zeros((n_features, 3))}
    if config.feature_embedding > 0:
        params["embed.w"] = _xavier(rng, n_features, w)
    for layer in range(config.n_attention_layers):
        for name in ("wq", "wk", "wv", "wo"):
            params[f"attn{layer}.{name}"] = _xavier(rng, w, w)
    params["bn1.gamma"] = np.ones(w)
    params["bn1.beta"] = np.zeros(w)
    params["bn1.running_mean"] = np.zeros(w)
    params["bn1.running_var"] = np.ones(w)
    params["fc1.w"] = _xavier(rng, w, config.hidden_size)
    params["fc1.b"] = np.zeros(config.hidden_size)
    params["bn2.gamma"] = np.ones(config.hidden_size)
    params["bn2.beta"] = np.zeros(config.hidden_size)
    params["bn2.running_mean"] = np.zeros(config.hidden_size)
    params["bn2.running_var"] = np.ones(config.hidden_size)
    params["fc2.w"] = _xavier(rng, config.hidden_size, 1)
    params["fc2.b"] = np.zeros(1)
    return params


def is_trainable(key: str) -> bool:
    """Running batch-norm statistics are state, not weights."""
    return not key.endswith(("running_mean", "running_var"))


def trainable_keys(params: Mapping[str, np.ndarray]) -> list[str]:
    return sorted(k for k in params if is_trainable(k))


@dataclass
class ForwardPass:
    """A built computation graph: final scores, the input leaf, parameter leaves."""

    scores: Node
    inputs: Node
    params: dict[str, Node]


def _feature_transform(x: Node, pnodes: dict[str, Node], config: RerankerConfig) -> Node:
    weights = dc.softmax(pnodes["transform.logits"])  # (d, 3) rows sum to 1
    parts = (x, dc.signed_log1p(x), dc.softsign(x))
    out = None
    for m, part in enumerate(parts):
        term = dc.mul(part, dc.slice_(weights, (slice(None), m)))
        out = term if out is None else dc.add(out, term)
    if config.feature_embedding > 0:
        out = dc.matmul(out, pnodes["embed.w"])
    return out


def _attention(h: Node, pnodes: dict[str, Node], layer: int, n_heads: int) -> Node:
    q = dc.matmul(h, pnodes[f"attn{layer}.wq"])
    k = dc.matmul(h, pnodes[f"attn{layer}.wk"])
    v = dc.matmul(h, pnodes[f"attn{layer}.wv"])
    head_width = h.shape[1] // n_heads
    heads = []
    for m in range(n_heads):
        cols = (slice(None), slice(m * head_width, (m + 1) * head_width))
        qm, km, vm = dc.slice_(q, cols), dc.slice_(k, cols), dc.slice_(v, cols)
        attn = dc.softmax(dc.scale(dc.matmul(qm, dc.transpose(km)), 1.0 / math.sqrt(head_width)))
        heads.append(dc.matmul(attn, vm))
    merged = heads[0] if n_heads == 1 else dc.concat(heads, axis=-1)
    return dc.matmul(merged, pnodes[f"attn{layer}.wo"])


def _dropout(x: Node, p: float, rng: np.random.Generator) -> Node:
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return Node(x.value * mask, (x,), lambda g: (g * mask,))


def _batchnorm(x: Node, pnodes: dict[str, Node], params: ModelParams, prefix: str, mode: str, momentum: float) -> Node:
    gamma, beta = pnodes[f"{prefix}.gamma"], pnodes[f"{prefix}.beta"]
    if mode == "train":
        mu = x.value.mean(axis=0)
        var = x.value.var(axis=0)
        sigma = np.sqrt(var + BN_EPS)
        xhat = (x.value - mu) / sigma
        # running statistics are state updated in place, outside the graph
        params[f"{prefix}.running_mean"] += momentum * (mu - params[f"{prefix}.running_mean"])
        params[f"{prefix}.running_var"] += momentum * (var - params[f"{prefix}.running_var"])

        def backward(g):
            dxhat = g * gamma.value
            dx = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) / sigma
            return (dx, (g * xhat).sum(axis=0), g.sum(axis=0))

    else:
        sigma = np.sqrt(params[f"{prefix}.running_var"] + BN_EPS)
        xhat = (x.value - params[f"{prefix}.running_mean"]) / sigma

        def backward(g):
            return (g * gamma.value / sigma, (g * xhat).sum(axis=0), g.sum(axis=0))

    return Node(gamma.value * xhat + beta.value, (x, gamma, beta), backward)


def build_forward(
    x: np.ndarray,
    params: ModelParams,
    config: RerankerConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> ForwardPass:
    """Build the scoring graph for one query's document matrix.

    Train mode needs ``rng`` for dropout and updates the running batch-norm
    statistics in ``params`` in place. Eval mode is deterministic and leaves
    ``params`` untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"expected a non-empty (docs, features) matrix, got shape {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and config.dropout_p > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    config.validate(x.shape[1])

    pnodes = {k: Node(v) for k, v in params.items() if is_trainable(k)}
    inputs = Node(x)

    h = _feature_transform(inputs, pnodes, config)
    for layer in range(config.n_attention_layers):
        h = _attention(h, pnodes, layer, config.n_heads)
        if mode == "train" and config.dropout_p > 0:
            h = _dropout(h, config.dropout_p, rng)
    h = _batchnorm(h, pnodes, params, "bn1", mode, config.bn_momentum)
    h = dc.relu(dc.add(dc.matmul(h, pnodes["fc1.w"]), pnodes["fc1.b"]))
    if mode == "train" and config.dropout_p > 0:
        h = _dropout(h, config.dropout_p, rng)
    h = _batchnorm(h, pnodes, params, "bn2", mode, config.bn_momentum)
    out = dc.add(dc.matmul(h, pnodes["fc2.w"]), pnodes["fc2.b"])
    scores = dc.reshape(out, (x.shape[0],))
    if not np.all(np.isfinite(scores.value)):
        raise DivergenceError("non-finite score produced by forward pass")
    return ForwardPass(scores=scores, inputs=inputs, params=pnodes)


def feature_transform(x: np.ndarray, params: ModelParams, config: RerankerConfig, mode: str = "eval") -> np.ndarray:
    """Transformation-layer output as a plain array (mode-independent)."""
    pnodes = {k: Node(v) for k, v in params.items() if is_trainable(k)}
    return _feature_transform(Node(np.asarray(x, dtype=np.float64)), pnodes, config).value.copy()


def score(x: np.ndarray, params: ModelParams, config: RerankerConfig) -> np.ndarray:
    """Eval-mode relevance scores for one query, one per document."""
    return build_forward(x, params, config, mode="eval").scores.value.copy()


def approx_ndcg_loss(scores: Node | np.ndarray, labels: np.ndarray, temperature: float) -> Node:
    """Differentiable nDCG surrogate for one query.

    Each document's rank is approximated by one plus the sum of sigmoids of
    scaled score differences against every other document; the DCG of those
    smooth ranks is normalized by the ideal full-list DCG and negated.
    All-zero-label queries yield an exact-zero constant with no gradient path.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    scores = dc.as_node(scores)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if scores.shape != (n,):
        raise ValueError(f"scores shape {scores.shape} does not match {n} labels")
    gains = np.power(2.0, labels) - 1.0
    if not np.any(gains):
        return Node(0.0)
    ideal = float(np.sum(np.sort(gains)[::-1] / np.log2(np.arange(2, n + 2))))

    # pairwise score differences diff[i, j] = (s_j - s_i) / temperature
    diff = dc.scale(dc.sub(dc.reshape(scores, (1, n)), dc.reshape(scores, (n, 1))), 1.0 / temperature)
    # smooth rank of i: 1 + sum_{j != i} sigmoid(diff[i, j]); the diagonal
    # contributes a constant 0.5 with zero gradient, subtracted up front
    ranks = dc.add(dc.sum_(dc.sigmoid(diff), axis=1), Node(0.5))
    log2_ranks = dc.scale(dc.log1p(ranks), 1.0 / math.log(2.0))
    dcg = dc.sum_(dc.mul(Node(gains), dc.reciprocal(log2_ranks)))
    return dc.scale(dcg, -1.0 / ideal)
