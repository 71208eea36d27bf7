"""Command-line pipeline: train, mine, select and evaluate on LETOR files.

Every subcommand is reproducible from its flags plus seed. A key-value config
file (INI sections [model], [train], [null]) can prefill any flag; explicit
flags win. The fully resolved configuration is echoed into every report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import baselines, groupmine, saliency, select, trainer
from .data import (
    DataError,
    LetorParseError,
    QuerySet,
    generate_synthetic,
    parse_candidates,
    parse_letor,
    restrict_topk,
    serialize_letor,
)
from .diffcore import ShapeError
from .groupmine import NullModelConfig
from .reranker import DivergenceError, RerankerConfig
from .select import EmptyGroupSetError, SelectionResult
from .trainer import TrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# §-style head counts for specific keep percentages, reduced to a divisor of
# the model width when they do not divide it evenly
PAPER_HEADS_BY_PERCENT = {5: 1, 10: 1, 30: 4, 40: 3}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's default 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def adapt_heads(width: int, requested: int, percent: int | None = None) -> int:
    """Largest head count <= the candidate that divides the model width.

    The candidate is the percent-specific lookup value when the keep
    percentage matches a known row, otherwise the requested head count.
    """
    candidate = PAPER_HEADS_BY_PERCENT.get(percent, requested)
    for h in range(min(candidate, width), 0, -1):
        if width % h == 0:
            return h
    return 1


def keep_count(percent: float, d: int) -> int:
    """Percentage-to-feature-count rule: floor(p * d), at least 1."""
    return max(1, math.floor(percent / 100.0 * d))


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return p.read_text()


def _load_queryset(path: str, candidates: str | None = None, topk: int | None = None) -> QuerySet:
    qs = parse_letor(_read_text(path))
    if candidates is not None:
        if topk is None:
            raise UsageError("--candidates requires --topk")
        qs = restrict_topk(qs, parse_candidates(_read_text(candidates)), topk)
    return qs


def _load_ini(path: str | None) -> dict[str, dict[str, str]]:
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _resolve(args, ini: dict, section: str, key: str, cast, default):
    """Priority: explicit flag > config file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if section in ini and key in ini[section]:
        raw = ini[section][key]
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    return default


def _model_config(args, ini) -> RerankerConfig:
    get = lambda key, cast, default: _resolve(args, ini, "model", key, cast, default)
    return RerankerConfig(
        n_attention_layers=get("attention_layers", int, 1),
        n_heads=get("heads", int, 1),
        feature_embedding=get("feature_embedding", int, 0),
        hidden_size=get("hidden_size", int, 128),
        dropout_p=get("dropout", float, 0.5),
        bn_momentum=get("bn_momentum", float, 0.4),
        temperature=get("temperature", float, 0.1),
    )


def _train_config(args, ini) -> TrainConfig:
    get = lambda key, cast, default: _resolve(args, ini, "train", key, cast, default)
    return TrainConfig(
        epochs=get("epochs", int, 100),
        batch_size=get("batch_size", int, 128),
        learning_rate=get("learning_rate", float, 5e-4),
        adam_beta1=get("beta1", float, 0.9),
        adam_beta2=get("beta2", float, 0.999),
        adam_eps=get("adam_eps", float, 1e-8),
        seed=get("seed", int, 0),
        shuffle_each_epoch=not get("no_shuffle", bool, False),
        standardize=not get("no_standardize", bool, False),
    )


def _null_config(args, ini, fallback_seed: int) -> NullModelConfig:
    get = lambda key, cast, default: _resolve(args, ini, "null", key, cast, default)
    return NullModelConfig(
        k_datasets=get("k_random", int, 5000),
        t=get("threshold", float, 0.95),
        alpha=get("alpha", float, 0.02),
        seed=get("null_seed", int, fallback_seed),
        method=get("null_method", str, "binomial"),
    )


def _config_echo(**parts) -> dict:
    out = {}
    for name, cfg in parts.items():
        if cfg is None:
            continue
        out[name] = dataclasses.asdict(cfg) if dataclasses.is_dataclass(cfg) else cfg
    return out


def _add_model_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("model")
    g.add_argument("--attention-layers", type=int, dest="attention_layers")
    g.add_argument("--heads", type=int, dest="heads")
    g.add_argument("--feature-embedding", type=int, dest="feature_embedding")
    g.add_argument("--hidden-size", type=int, dest="hidden_size")
    g.add_argument("--dropout", type=float, dest="dropout")
    g.add_argument("--bn-momentum", type=float, dest="bn_momentum")
    g.add_argument("--temperature", type=float, dest="temperature")


def _add_train_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int, dest="batch_size")
    g.add_argument("--learning-rate", type=float, dest="learning_rate")
    g.add_argument("--beta1", type=float)
    g.add_argument("--beta2", type=float)
    g.add_argument("--adam-eps", type=float, dest="adam_eps")
    g.add_argument("--seed", type=int)
    g.add_argument("--no-shuffle", action="store_true", default=None, dest="no_shuffle")
    g.add_argument("--no-standardize", action="store_true", default=None, dest="no_standardize")


def _add_null_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("null model")
    g.add_argument("--k-random", type=int, dest="k_random")
    g.add_argument("--threshold", type=float, dest="threshold")
    g.add_argument("--alpha", type=float)
    g.add_argument("--null-seed", type=int, dest="null_seed")
    g.add_argument("--null-method", choices=("binomial", "literal"), dest="null_method")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI config file prefilling flags")
    p.add_argument("--threads", type=int, default=1, help="worker cap (current implementation is sequential)")


def _add_keep_flags(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--keep", type=int, help="number of features to keep")
    g.add_argument("--keep-percent", type=float, dest="keep_percent", help="percentage of features, floor(p*d)")


def _resolve_keep(args, d: int) -> tuple[int, int | None]:
    if args.keep is not None:
        if not 1 <= args.keep <= d:
            raise UsageError(f"--keep must lie in 1..{d}")
        return args.keep, None
    percent = args.keep_percent
    if not 0 < percent <= 100:
        raise UsageError("--keep-percent must lie in (0, 100]")
    n = keep_count(percent, d)
    as_int = int(percent) if float(percent).is_integer() else None
    return n, as_int


def _write_features_file(path: str, kept_0based: list[int]):
    Path(path).write_text("".join(f"{j + 1}\n" for j in sorted(kept_0based)))


def _write_selection_report(out_path: str, command: str, config: dict, result: SelectionResult):
    report = {
        "command": command,
        "config": config,
        "method": result.method,
        "kept_1based": [j + 1 for j in sorted(result.kept)],
        "order_1based": [j + 1 for j in result.kept],
        "clusters_1based": [[f + 1 for f in c] for c in result.clusters],
        "frequency_1based": {str(f + 1): n for f, n in sorted(result.frequency.items())},
        "warnings": result.warnings,
    }
    Path(out_path + ".report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def _print_selection(result: SelectionResult, d: int):
    print(f"method: {result.method}")
    print(f"kept {len(result.kept)} of {d} features (1-based): {[j + 1 for j in sorted(result.kept)]}")
    for w in result.warnings:
        print(f"warning: {w}")


def cmd_synth(args, ini) -> int:
    qs, roles = generate_synthetic(
        seed=args.seed if args.seed is not None else 0,
        n_queries=args.queries,
        docs_per_query=args.docs,
        informative=args.informative,
        duplicates_per_informative=args.duplicates,
        noise=args.noise,
        n_grades=args.grades,
        label_noise=args.label_noise,
        duplicate_noise=args.duplicate_noise,
    )
    Path(args.out).write_text(serialize_letor(qs))
    if args.truth:
        lines = [f"{j + 1}\t{role}" for j, role in enumerate(roles)]
        Path(args.truth).write_text("\n".join(lines) + "\n")
    print(f"wrote {qs.n_queries} queries x {qs.queries[0].n_docs} docs, d={qs.feature_count} -> {args.out}")
    return EXIT_OK


def cmd_train(args, ini) -> int:
    qs_train = _load_queryset(args.train, args.candidates, args.topk)
    qs_valid = _load_queryset(args.valid, args.candidates, args.topk) if args.valid else None
    model_cfg = _model_config(args, ini)
    train_cfg = _train_config(args, ini)
    result = trainer.train(qs_train, qs_valid, model_cfg, train_cfg)
    trainer.save_checkpoint(args.checkpoint, model_cfg, result.params, result.stats, result.state)
    echo = _config_echo(model=model_cfg, train=train_cfg)
    if args.log:
        with open(args.log, "w") as fh:
            fh.write(json.dumps({"record": "config", **echo}) + "\n")
            for rec in result.history:
                fh.write(json.dumps({"record": "epoch", **dataclasses.asdict(rec)}) + "\n")
    last = result.history[-1]
    print(f"trained {train_cfg.epochs} epochs on {qs_train.n_queries} queries -> {args.checkpoint}")
    print(f"final mean loss {last.mean_loss:.6f}" + (f", valid nDCG@3 {last.valid_ndcg3:.4f}" if last.valid_ndcg3 is not None else ""))
    return EXIT_OK


def _load_model(checkpoint_path: str):
    ckpt = trainer.load_checkpoint(checkpoint_path)
    return ckpt.model_config, ckpt.params, ckpt.stats


def cmd_saliency(args, ini) -> int:
    model_cfg, params, stats = _load_model(args.checkpoint)
    qs = trainer.apply_standardization(_load_queryset(args.data), stats)
    echo = _config_echo(model=model_cfg)
    body = saliency.dump_maps(params, model_cfg, qs)
    Path(args.out).write_text(f"# {json.dumps(echo)}\n" + body)
    print(f"wrote {qs.n_docs} saliency maps -> {args.out}")
    return EXIT_OK


def cmd_mine(args, ini) -> int:
    model_cfg, params, stats = _load_model(args.checkpoint)
    qs = trainer.apply_standardization(_load_queryset(args.data), stats)
    null_cfg = _null_config(args, ini, fallback_seed=0)
    mined = saliency.mine_groups(params, model_cfg, qs, null_cfg.t)
    survivors, reports = groupmine.prune(mined, null_cfg)
    echo = _config_echo(model=model_cfg, null=null_cfg)
    header = f"# {json.dumps(echo)}\n"
    Path(args.out).write_text(header + groupmine.format_prune_report(reports, survivors_only=not args.all_groups))
    print(
        f"mined {len(mined.groups)} distinct groups from {mined.maps_total} maps; "
        f"{len(survivors.groups)} survive the null model -> {args.out}"
    )
    return EXIT_OK


def cmd_select_nfs(args, ini) -> int:
    qs_train = _load_queryset(args.train, args.candidates, args.topk)
    qs_valid = _load_queryset(args.valid, args.candidates, args.topk) if args.valid else None
    n_keep, percent = _resolve_keep(args, qs_train.feature_count)
    model_cfg = _model_config(args, ini)
    train_cfg = _train_config(args, ini)
    width = model_cfg.width(qs_train.feature_count)
    heads = adapt_heads(width, model_cfg.n_heads, percent)
    if heads != model_cfg.n_heads:
        model_cfg = dataclasses.replace(model_cfg, n_heads=heads)
    null_cfg = _null_config(args, ini, fallback_seed=train_cfg.seed)
    result = select.nfs_select(qs_train, model_cfg, train_cfg, null_cfg, n_keep, qs_valid)
    _write_features_file(args.out, result.kept)
    echo = _config_echo(model=model_cfg, train=train_cfg, null=null_cfg, keep={"n_keep": n_keep, "percent": percent})
    _write_selection_report(args.out, "select-nfs", echo, result)
    _print_selection(result, qs_train.feature_count)
    return EXIT_OK


def _run_baseline(args, ini, method: str) -> int:
    qs = _load_queryset(args.train, args.candidates, args.topk)
    n_keep, percent = _resolve_keep(args, qs.feature_count)
    seed = args.seed if args.seed is not None else 0
    if method == "gas":
        result = baselines.gas_select(qs, args.k, n_keep, args.c, args.metric, args.subsample, seed)
    elif method == "hcas":
        result = baselines.hcas_select(qs, n_keep, args.k, args.subsample, seed)
    else:
        importances = baselines.parse_importance_file(_read_text(args.importances), qs.feature_count)
        result = baselines.xgas_select(qs, importances, args.k, n_keep, args.c, args.subsample, seed)
    _write_features_file(args.out, result.kept)
    echo = _config_echo(
        selection={
            "method": method,
            "n_keep": n_keep,
            "percent": percent,
            "k": args.k,
            "c": getattr(args, "c", None),
            "metric": getattr(args, "metric", None),
            "subsample": args.subsample,
            "seed": seed,
        }
    )
    _write_selection_report(args.out, f"select-{method}", echo, result)
    _print_selection(result, qs.feature_count)
    return EXIT_OK


def _parse_labeled_path(spec: str) -> tuple[str, str]:
    if "=" in spec:
        label, path = spec.split("=", 1)
        return label, path
    return Path(spec).stem, spec


def _read_feature_file(path: str, d: int) -> list[int]:
    kept = []
    for lineno, raw in enumerate(_read_text(path).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            fid = int(line)
        except ValueError:
            raise DataError(f"{path} line {lineno}: expected one 1-based feature id per line") from None
        if not 1 <= fid <= d:
            raise DataError(f"{path} line {lineno}: feature id {fid} outside 1..{d}")
        kept.append(fid - 1)
    if not kept:
        raise DataError(f"{path}: no feature ids found")
    return sorted(set(kept))


def _subset(qs: QuerySet, feats: list[int]) -> QuerySet:
    from .data import Query

    sel = np.asarray(feats, dtype=np.int64)
    queries = tuple(Query(q.qid, q.features[:, sel].copy(), q.labels.copy(), q.doc_ids) for q in qs.queries)
    return QuerySet(queries, len(feats))


def _read_scores_file(path: str, qs: QuerySet) -> list[np.ndarray]:
    vals = []
    for lineno, raw in enumerate(_read_text(path).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals.append(float(line))
        except ValueError:
            raise DataError(f"{path} line {lineno}: expected one score per line") from None
    if len(vals) != qs.n_docs:
        raise DataError(f"{path}: {len(vals)} scores for {qs.n_docs} documents")
    out, pos = [], 0
    for q in qs.queries:
        out.append(np.asarray(vals[pos : pos + q.n_docs]))
        pos += q.n_docs
    return out


def cmd_eval(args, ini) -> int:
    from . import metrics

    qs_train = _load_queryset(args.train, args.candidates, args.topk)
    qs_test = _load_queryset(args.test, args.candidates, args.topk)
    qs_valid = _load_queryset(args.valid, args.candidates, args.topk) if args.valid else None
    if qs_test.feature_count != qs_train.feature_count:
        raise DataError("train and test sets disagree on feature count")
    d = qs_train.feature_count
    model_cfg = _model_config(args, ini)
    train_cfg = _train_config(args, ini)
    k = args.k

    subsets: list[tuple[str, list[int]]] = [("all", list(range(d)))]
    for spec in args.features or []:
        label, path = _parse_labeled_path(spec)
        subsets.append((label, _read_feature_file(path, d)))

    rows = []
    for label, feats in subsets:
        percent_exact = 100.0 * len(feats) / d
        percent = int(round(percent_exact)) if abs(percent_exact - round(percent_exact)) < 1e-9 else None
        cfg = model_cfg
        width = cfg.width(len(feats))
        heads = adapt_heads(width, cfg.n_heads, percent)
        if heads != cfg.n_heads:
            cfg = dataclasses.replace(cfg, n_heads=heads)
        sub_train = _subset(qs_train, feats)
        sub_valid = _subset(qs_valid, feats) if qs_valid is not None else None
        sub_test = _subset(qs_test, feats)
        result = trainer.train(sub_train, sub_valid, cfg, train_cfg)
        ndcg = trainer.evaluate(sub_test, result.params, cfg, result.stats, k)
        rows.append(
            {
                "record": "row",
                "method": label,
                "percent": round(percent_exact, 2),
                "n_features": len(feats),
                "heads": cfg.n_heads,
                f"ndcg_at_{k}": round(ndcg, 6),
                "features_1based": [f + 1 for f in feats],
            }
        )

    for spec in args.scores or []:
        label, path = _parse_labeled_path(spec)
        scores = _read_scores_file(path, qs_test)
        ndcg = metrics.mean_ndcg_at_k(qs_test, scores, k)
        rows.append(
            {
                "record": "row",
                "method": label,
                "percent": None,
                "n_features": None,
                "heads": None,
                f"ndcg_at_{k}": round(ndcg, 6),
                "features_1based": None,
            }
        )

    echo = _config_echo(model=model_cfg, train=train_cfg, eval={"k": k})
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(json.dumps({"record": "config", **echo}) + "\n")
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    print(f"{'method':<16}{'percent':>8}{'n_feat':>8}{'heads':>6}{f'nDCG@{k}':>10}")
    for row in rows:
        pc = f"{row['percent']:.1f}" if row["percent"] is not None else "-"
        nf = row["n_features"] if row["n_features"] is not None else "-"
        hd = row["heads"] if row["heads"] is not None else "-"
        print(f"{row['method']:<16}{pc:>8}{nf:>8}{hd:>6}{row[f'ndcg_at_{k}']:>10.4f}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="nfsrank", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic LETOR dataset with known feature roles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--queries", type=int, required=True)
    p.add_argument("--docs", type=int, required=True)
    p.add_argument("--informative", type=int, required=True)
    p.add_argument("--duplicates", type=int, required=True)
    p.add_argument("--noise", type=int, required=True)
    p.add_argument("--grades", type=int, default=5)
    p.add_argument("--label-noise", type=float, default=0.1, dest="label_noise")
    p.add_argument("--duplicate-noise", type=float, default=0.1, dest="duplicate_noise")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="also write feature roles, one `fid<TAB>role` line per feature")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the reranker and write a checkpoint")
    p.add_argument("--train", required=True)
    p.add_argument("--valid")
    p.add_argument("--candidates", help="top-k candidate lists, `qid<TAB>idx,idx,...` (0-based positions)")
    p.add_argument("--topk", type=int)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", help="line-delimited JSON training log")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("saliency", help="dump normalized saliency maps for a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("mine", help="mine salient feature groups and prune them against the null model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--all-groups", action="store_true", dest="all_groups", help="report pruned groups too")
    _add_null_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("select-nfs", help="full neural feature selection pipeline")
    p.add_argument("--train", required=True)
    p.add_argument("--valid")
    p.add_argument("--candidates")
    p.add_argument("--topk", type=int)
    p.add_argument("--out", required=True)
    _add_keep_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    _add_null_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_select_nfs)

    for name, help_text in (
        ("select-gas", "greedy importance/Kendall-tau baseline"),
        ("select-hcas", "Spearman single-linkage clustering baseline"),
        ("select-xgas", "GAS with externally supplied importances"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--train", required=True)
        p.add_argument("--candidates")
        p.add_argument("--topk", type=int)
        p.add_argument("--out", required=True)
        p.add_argument("--k", type=int, default=3, help="nDCG cutoff for importance")
        p.add_argument("--subsample", type=int, default=baselines.DEFAULT_SUBSAMPLE)
        p.add_argument("--seed", type=int)
        if name != "select-hcas":
            p.add_argument("--c", type=float, default=baselines.DEFAULT_TRADEOFF, help="similarity trade-off constant")
        if name == "select-gas":
            p.add_argument("--metric", choices=("ndcg", "map"), default="ndcg")
        if name == "select-xgas":
            p.add_argument("--importances", required=True, help="file of `fid<TAB>value` lines")
        _add_keep_flags(p)
        _add_common(p)
        p.set_defaults(func=lambda a, i, m=name.split("-")[1]: _run_baseline(a, i, m))

    p = sub.add_parser("eval", help="retrain/evaluate the reranker on feature subsets; nDCG grid report")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--valid")
    p.add_argument("--candidates")
    p.add_argument("--topk", type=int)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--features", action="append", help="[label=]path of a selected-features file; repeatable")
    p.add_argument("--scores", action="append", help="[label=]path of an external per-document score file; repeatable")
    p.add_argument("--out", help="line-delimited JSON report")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        ini = _load_ini(args.config)
        return args.func(args, ini)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LetorParseError, DataError, EmptyGroupSetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, ShapeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
