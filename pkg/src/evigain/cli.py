"""Command-line workflow: teach, score, build-dataset, train, rerank,
eval, sweep.

Each subcommand is a thin wrapper over the library operations.  Exit code
0 on success; on failure a single machine-readable JSON error line goes
to stderr and the exit code is 1 (argparse usage errors exit 2).  The
global ``--seed`` pins every stochastic choice; reruns on unchanged
inputs reproduce outputs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import (
    AppConfig,
    load_config,
    make_context_template,
    make_labeling,
    make_provider,
    make_strategy,
    make_train_config,
)
from .confidence import IdfTable
from .errors import EvigainError, InvalidInputError
from .mig import (
    BaselineCache,
    LabelingConfig,
    build_dataset,
    compute_mig,
    load_labeled,
    load_scored,
    load_triplets,
    save_labeled,
    save_scored,
    score_from_sequences,
)
from .pipeline import Corpus, TfidfIndex, eval_ranking, per_query_metric_rows, retrieve_rerank_context
from .reranker import RerankerModel, train
from .teacher import (
    VARIANT_WITH_DOC,
    VARIANT_WITHOUT_DOC,
    VARIANTS,
    LogProbRecord,
    TeacherRequest,
    load_logprob_records,
    save_logprob_records,
)

log = logging.getLogger("evigain")


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _float_list(value: str) -> list[float]:
    try:
        return [float(x) for x in value.split(",") if x.strip() != ""]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad number list {value!r}: {e}") from e


def _load_featurizer_idf(cfg: AppConfig) -> IdfTable | None:
    # train/rerank/eval must featurize identically; the idf table is
    # shared through confidence.idf_path when set
    if cfg.confidence.idf_path:
        return IdfTable.load(cfg.confidence.idf_path)
    return None


def _requests_for(triplet) -> dict[str, TeacherRequest]:
    return {
        VARIANT_WITH_DOC: TeacherRequest(
            query=triplet.query,
            answer=triplet.answer,
            document=triplet.document,
            attachment_refs=triplet.attachment_refs,
        ),
        VARIANT_WITHOUT_DOC: TeacherRequest(
            query=triplet.query,
            answer=triplet.answer,
            document=None,
            attachment_refs=triplet.attachment_refs,
        ),
    }


# ---------------------------------------------------------------------------
# Subcommands


def cmd_teach(args: argparse.Namespace, cfg: AppConfig) -> int:
    triplets = load_triplets(args.triplets)
    provider = make_provider(cfg)
    teacher_hash = provider.config_hash()
    out = Path(args.out)
    meta_path = out.with_name(out.name + ".meta.json")

    cached: dict[tuple[str, str], LogProbRecord] = {}
    if out.exists() and meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("teacher_hash") == teacher_hash:
            for rec in load_logprob_records(out):
                cached[(rec.triplet_id, rec.variant)] = rec
        else:
            log.info("teacher config changed; recomputing all records")

    todo = [
        (t, variant)
        for t in triplets
        for variant in VARIANTS
        if (t.id, variant) not in cached
    ]

    def fetch(job) -> LogProbRecord:
        t, variant = job
        seq = provider.logprobs(_requests_for(t)[variant])
        return LogProbRecord(triplet_id=t.id, variant=variant, sequence=seq)

    if todo:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            for rec in pool.map(fetch, todo):
                cached[(rec.triplet_id, rec.variant)] = rec

    records = [cached[key] for key in sorted(cached)]
    save_logprob_records(out, records)
    meta_path.write_text(
        json.dumps({"teacher_hash": teacher_hash, "records": len(records)}, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    log.info("wrote %d records to %s (%d fetched, %d cached)",
             len(records), out, len(todo), len(records) - len(todo))
    print(json.dumps({"records": len(records), "fetched": len(todo), "out": str(out)}))
    return 0


def cmd_score(args: argparse.Namespace, cfg: AppConfig) -> int:
    triplets = load_triplets(args.triplets)
    strategy = make_strategy(cfg)

    if args.logprobs:
        by_key = {
            (rec.triplet_id, rec.variant): rec.sequence
            for rec in load_logprob_records(args.logprobs)
        }
        scored = []
        for t in triplets:
            try:
                seq_with = by_key[(t.id, VARIANT_WITH_DOC)]
                seq_without = by_key[(t.id, VARIANT_WITHOUT_DOC)]
            except KeyError as e:
                raise InvalidInputError(
                    f"logprob records missing variant for triplet {t.id!r}"
                ) from e
            scored.append(score_from_sequences(t, seq_with, seq_without, strategy))
    else:
        provider = make_provider(cfg)
        cache = BaselineCache()

        def score_one(t):
            return compute_mig(t, provider, strategy, baseline_cache=cache)

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            scored = list(pool.map(score_one, triplets))

    scored.sort(key=lambda st: st.triplet.id)
    save_scored(args.out, scored)
    log.info("scored %d triplets -> %s", len(scored), args.out)
    print(json.dumps({"scored": len(scored), "out": str(args.out)}))
    return 0


def cmd_build_dataset(args: argparse.Namespace, cfg: AppConfig) -> int:
    scored = load_scored(args.scored)
    balance = cfg.labeling.balance and not args.no_balance
    dataset, stats = build_dataset(scored, make_labeling(cfg), seed=cfg.seed, balance=balance)
    save_labeled(args.out, dataset)
    report = {
        "examples": len(dataset),
        "positives": stats.positives,
        "negatives": stats.negatives,
        "discarded": stats.discarded,
        "balanced": balance,
        "histogram": [[lo, count] for lo, count in stats.histogram],
        "out": str(args.out),
    }
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_train(args: argparse.Namespace, cfg: AppConfig) -> int:
    dataset = load_labeled(args.dataset)
    tc = make_train_config(cfg)
    idf = _load_featurizer_idf(cfg)
    model, history = train(dataset, tc, idf=idf)
    content_hash = model.save(args.model_out)
    if args.history_out:
        with open(args.history_out, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "l_ce", "l_rank", "l_total"])
            for row in history:
                writer.writerow([row.epoch, repr(row.l_ce), repr(row.l_rank), repr(row.l_total)])
    final = history[-1]
    print(
        json.dumps(
            {
                "model": str(args.model_out),
                "content_hash": content_hash,
                "examples": len(dataset),
                "epochs": final.epoch,
                "l_ce": final.l_ce,
                "l_rank": final.l_rank,
                "l_total": final.l_total,
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_rerank(args: argparse.Namespace, cfg: AppConfig) -> int:
    model = RerankerModel.load(args.model)
    corpus = Corpus.load(args.corpus)
    idf = _load_featurizer_idf(cfg)
    index = TfidfIndex(corpus)
    top, prompt = retrieve_rerank_context(
        model,
        args.query,
        corpus,
        m=cfg.pipeline.m,
        k=args.k if args.k is not None else cfg.pipeline.k,
        index=index,
        template=make_context_template(cfg),
        idf=idf,
    )
    print(
        json.dumps(
            {
                "query": args.query,
                "topk": [{"doc_id": doc_id, "score": score} for doc_id, score in top],
                "context": prompt,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_eval(args: argparse.Namespace, cfg: AppConfig) -> int:
    model = RerankerModel.load(args.model)
    scored = load_scored(args.scored)
    idf = _load_featurizer_idf(cfg)
    metrics = eval_ranking(model, scored, idf=idf, ndcg_k=cfg.pipeline.ndcg_k)
    if args.csv_out:
        rows = per_query_metric_rows(model, scored, idf=idf, ndcg_k=cfg.pipeline.ndcg_k)
        with open(args.csv_out, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(
                f,
                fieldnames=["query", "answer", "documents", "pairwise_accuracy", "kendall_tau", "ndcg"],
            )
            writer.writeheader()
            writer.writerows(rows)
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return 0


def _condition_name(alpha: float) -> str:
    if alpha == 1.0:
        return "ce_only"
    if alpha == 0.0:
        return "ranknet_only"
    return "hybrid"


def cmd_sweep(args: argparse.Namespace, cfg: AppConfig) -> int:
    scored = load_scored(args.scored)
    idf = _load_featurizer_idf(cfg)
    alphas = args.alphas
    taus = args.taus
    rows = []
    for tau in taus:
        labeling = LabelingConfig(b1=tau, b2=-tau)
        dataset, stats = build_dataset(
            scored, labeling, seed=cfg.seed, balance=cfg.labeling.balance
        )
        for alpha in alphas:
            tc = make_train_config(cfg, alpha=alpha)
            model, history = train(dataset, tc, idf=idf)
            metrics = eval_ranking(model, scored, idf=idf, ndcg_k=cfg.pipeline.ndcg_k)
            final = history[-1]
            row = {
                "alpha": alpha,
                "tau": tau,
                "condition": _condition_name(alpha),
                "examples": len(dataset),
                "positives": stats.positives,
                "negatives": stats.negatives,
                "pairwise_accuracy": metrics.pairwise_accuracy,
                "kendall_tau": metrics.kendall_tau,
                "ndcg": metrics.ndcg,
                "l_ce": final.l_ce,
                "l_rank": final.l_rank,
                "l_total": final.l_total,
                "model_hash": model.content_hash(),
            }
            if args.models_dir:
                model_path = Path(args.models_dir) / f"model_alpha{alpha}_tau{tau}.json"
                model.save(model_path)
                row["model_path"] = str(model_path)
            rows.append(row)
            print(json.dumps(row, sort_keys=True))
    if args.out:
        fieldnames = list(rows[0].keys()) if rows else []
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
        log.info("wrote %d sweep rows to %s", len(rows), args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evigain",
        description="Score retrieved evidence by information gain, build ranking "
        "datasets, train a lightweight reranker, and serve retrieve->rerank->context.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML config file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--jobs", type=_positive_int, default=1,
                        help="parallel workers for per-triplet work")
    common.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("teach", parents=[common],
                       help="fetch and cache with/without-document logprob records")
    p.add_argument("--triplets", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_teach)

    p = sub.add_parser("score", parents=[common],
                       help="emit scored-triplet JSONL (gain per document)")
    p.add_argument("--triplets", required=True)
    p.add_argument("--logprobs", default=None,
                   help="use precomputed logprob records instead of calling the teacher")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("build-dataset", parents=[common],
                       help="label scored triplets, discard neutral, balance 1:1")
    p.add_argument("--scored", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-balance", action="store_true",
                   help="keep the full labeled set without downsampling")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", parents=[common], help="train the reranker")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--history-out", default=None, help="per-epoch loss CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rerank", parents=[common],
                       help="retrieve, rerank, and print top-k plus assembled context")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("-k", type=_positive_int, default=None,
                   help="documents to keep (default from config)")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", parents=[common],
                       help="ranking metrics of a model against scored triplets")
    p.add_argument("--model", required=True)
    p.add_argument("--scored", required=True)
    p.add_argument("--csv-out", default=None, help="per-query metric rows")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common],
                       help="grid over loss weight alpha and labeling threshold tau")
    p.add_argument("--scored", required=True)
    p.add_argument("--alphas", type=_float_list, default=[0.0, 0.74, 1.0])
    p.add_argument("--taus", type=_float_list, default=[0.2])
    p.add_argument("--out", default=None, help="grid CSV path")
    p.add_argument("--models-dir", default=None, help="save each cell's model here")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        return args.func(args, cfg)
    except EvigainError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(
            json.dumps({"error": "FileNotFoundError", "message": str(e), "path": e.filename}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
