"""Feature selection for learning-to-rank driven by a neural reranker's saliency."""

from .baselines import gas_select, hcas_select, parse_importance_file, single_feature_importance, xgas_select
from .data import (
    Document,
    FeatureRole,
    LetorParseError,
    Query,
    QuerySet,
    generate_synthetic,
    parse_candidates,
    parse_letor,
    restrict_topk,
    serialize_letor,
)
from .groupmine import NullModelConfig, prune, random_group_frequencies
from .metrics import average_precision, kendall_tau, mean_ndcg_at_k, ndcg_at_k, spearman
from .reranker import ModelParams, RerankerConfig, approx_ndcg_loss, init_params, score
from .saliency import FeatureGroupSet, extract_group, mine_groups, saliency_map
from .select import SelectionResult, nfs_select, pick_representatives, similarity, single_linkage
from .trainer import (
    FeatureStats,
    TrainConfig,
    apply_standardization,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    standardize,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Document",
    "FeatureRole",
    "FeatureGroupSet",
    "FeatureStats",
    "LetorParseError",
    "ModelParams",
    "NullModelConfig",
    "Query",
    "QuerySet",
    "RerankerConfig",
    "SelectionResult",
    "TrainConfig",
    "approx_ndcg_loss",
    "apply_standardization",
    "average_precision",
    "evaluate",
    "extract_group",
    "gas_select",
    "generate_synthetic",
    "hcas_select",
    "init_params",
    "kendall_tau",
    "load_checkpoint",
    "mean_ndcg_at_k",
    "mine_groups",
    "ndcg_at_k",
    "nfs_select",
    "parse_candidates",
    "parse_importance_file",
    "parse_letor",
    "pick_representatives",
    "prune",
    "random_group_frequencies",
    "restrict_topk",
    "saliency_map",
    "save_checkpoint",
    "score",
    "serialize_letor",
    "similarity",
    "single_feature_importance",
    "single_linkage",
    "spearman",
    "standardize",
    "train",
    "xgas_select",
]
