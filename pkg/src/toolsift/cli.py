#!/usr/bin/env python3
"""
toolsift CLI - Command-line interface for toolsift

Subcommands build embeddings, train the stage-1 MLC, the refiner and the
projection, run two-stage retrieval, evaluate, analyze failures, and generate
or judge synthetic datasets. Every command writes manifest.json (resolved
config plus SHA-256 digests) into --out-dir. Results meant for other
programs go to stdout; progress and logs go to stderr.
"""
import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import ValidationError

from . import __version__
from .corpus import corpus_stats, load_corpus, load_tools, save_corpus, split_train_val
from .datagen import (
    examples_from_corpus, export_dataset, judge_pairs, load_examples, run_generation,
    write_generation_log,
)
from .embed import (
    EmbeddingMatrix, HashingFeaturizer, PrecomputedVectors, TripletProjectionObjective,
    build_description_embeddings, build_tool2vec, embed_queries, finetune_projection,
)
from .errors import NumericalError, ToolsiftError
from .evaluation import (
    compare_methods, evaluate, export_embedding_points, export_similarity_csv, failed_query_lengths,
    failure_rates, similarity_gap, write_per_query_csv, write_report_json, write_summary_csv,
)
from .llm import create_client, settings_from_env
from .models import (
    STAGE1_METHODS, DatagenConfig, EvalConfig, FeaturizerConfig, PipelineConfig, RefinerConfig,
    RetrievalResult, TrainConfig, TripletConfig,
)
from .refine import (
    DESCRIPTION_FILE, FEATURIZER_FILE, MLC_FILE, PROJECTION_FILE, QUERY_FILE, REFINER_FILE,
    TOOL2VEC_FILE, RefinerObjective, init_refiner_params, load_artifacts, retrieve_two_stage,
    train_refiner,
)
from .retrieve import MlcObjective, train_mlc
from .storage import (
    dumps_line, iter_jsonl, read_json, write_json, write_jsonl, write_manifest,
)
from .synthetic import make_disjoint_corpus, make_overlapping_corpus
from .train import grad_check, write_loss_csv

DEFAULT_OUT_DIR = "toolsift_out"


# -------------------------------
# Helpers
# -------------------------------
def configure_logging(verbose: bool = False) -> None:
    """Render structlog events to stderr so stdout stays machine-readable."""
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(logging.INFO if verbose else logging.WARNING),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def status(message: str) -> None:
    print(f"✅ {message}", file=sys.stderr)


def parse_list(value: Any, cast=str) -> List:
    """Accept "a,b,c" from a flag or a JSON list from --config."""
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    return [cast(part.strip()) for part in str(value).split(",") if part.strip()]


def drop_none(values: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in values.items() if v is not None}


def out_path(args: argparse.Namespace, name: str) -> str:
    return os.path.join(args.out_dir, name)


def artifacts_dir(args: argparse.Namespace) -> str:
    return args.artifacts or args.out_dir


def resolved_config(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}


def finish(args: argparse.Namespace, inputs: Sequence[str], outputs: Sequence[str] = ()) -> None:
    os.makedirs(args.out_dir, exist_ok=True)
    write_manifest(args.out_dir, args.command, resolved_config(args), [p for p in inputs if p], outputs)


def train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(**drop_none({
        "learning_rate": args.learning_rate,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "l2": args.l2,
        "seed": args.seed,
    }))


def read_results(path: str) -> List[RetrievalResult]:
    return [RetrievalResult(**obj) for _, obj in iter_jsonl(path)]


def read_texts(path: str) -> List[Tuple[str, str]]:
    """(query_id, text) pairs from a JSON Lines file of {"text", "query_id"?} objects."""
    pairs = []
    for line_no, obj in iter_jsonl(path):
        if not isinstance(obj.get("text"), str):
            raise ValueError(f"{path}:{line_no} lacks a text field")
        pairs.append((str(obj.get("query_id", f"line-{line_no}")), obj["text"]))
    return pairs


# -------------------------------
# Commands
# -------------------------------
def cmd_build_embeddings(args: argparse.Namespace) -> None:
    """Build the query, Tool2Vec and description matrices plus a coverage report."""
    corpus = load_corpus(args.tools, args.queries)
    featurizer_cfg = FeaturizerConfig(**drop_none({
        "dim": args.dim,
        "ngram_min": args.ngram_min,
        "ngram_max": args.ngram_max,
        "lowercase": not args.no_lowercase,
    }))
    featurizer = HashingFeaturizer(featurizer_cfg, workers=args.workers)
    query_provider = PrecomputedVectors.from_file(args.query_vectors) if args.query_vectors else featurizer
    description_provider = (PrecomputedVectors.from_file(args.description_vectors)
                            if args.description_vectors else featurizer)

    queries = embed_queries(corpus, query_provider)
    tool2vec, t2v_report = build_tool2vec(corpus, queries, parse_list(args.splits))
    descriptions, desc_report = build_description_embeddings(corpus, description_provider)

    os.makedirs(args.out_dir, exist_ok=True)
    outputs = [out_path(args, name) for name in
               (FEATURIZER_FILE, QUERY_FILE, TOOL2VEC_FILE, DESCRIPTION_FILE, "coverage.json")]
    write_json(outputs[0], featurizer_cfg.model_dump())
    queries.save(outputs[1])
    tool2vec.save(outputs[2])
    descriptions.save(outputs[3])
    write_json(outputs[4], {"tool2vec": t2v_report.model_dump(), "description": desc_report.model_dump()})
    finish(args, [args.tools, args.queries, args.query_vectors, args.description_vectors], outputs)
    status(f"Embedded {len(queries)} queries; Tool2Vec covers {len(tool2vec)}/{corpus.n_tools} tools "
           f"({len(t2v_report.uncovered)} uncovered) -> {args.out_dir}")


def cmd_train(args: argparse.Namespace) -> None:
    """Train one of mlc | refiner | projection and write its artifact and loss CSV."""
    corpus = load_corpus(args.tools, args.queries)
    source = artifacts_dir(args)
    os.makedirs(args.out_dir, exist_ok=True)
    inputs = [args.tools, args.queries]

    if args.model == "mlc":
        featurizer_path = os.path.join(source, FEATURIZER_FILE)
        inputs.append(featurizer_path)
        featurizer = HashingFeaturizer(FeaturizerConfig(**read_json(featurizer_path)))
        model, report = train_mlc(corpus, featurizer, train_config(args))
        artifact = out_path(args, MLC_FILE)
        model.save(artifact)

    elif args.model == "projection":
        query_path = os.path.join(source, QUERY_FILE)
        t2v_path = os.path.join(source, TOOL2VEC_FILE)
        inputs += [query_path, t2v_path]
        cfg = TripletConfig(**drop_none({
            "margin": args.margin,
            "epochs": args.epochs,
            "learning_rate": args.learning_rate,
            "batch_size": args.batch_size,
            "seed": args.seed,
        }))
        model, report = finetune_projection(EmbeddingMatrix.load(query_path), EmbeddingMatrix.load(t2v_path),
                                            corpus, cfg)
        artifact = out_path(args, PROJECTION_FILE)
        model.save(artifact)

    else:
        artifacts = load_artifacts(source, require_refiner=False)
        inputs += [os.path.join(source, name) for name in
                   (FEATURIZER_FILE, QUERY_FILE, TOOL2VEC_FILE, DESCRIPTION_FILE, MLC_FILE, PROJECTION_FILE)]
        queries = artifacts.query_embeddings
        if queries is None:
            queries = embed_queries(corpus, artifacts.featurizer)
        if artifacts.projection is not None:
            queries = artifacts.projection.apply_matrix(queries)
        stage1_cfg = PipelineConfig(stage1_method=args.stage1_method, N=args.n, K=1)
        refiner_cfg = RefinerConfig(**drop_none({
            "hidden": tuple(parse_list(args.hidden, int)) if args.hidden is not None else None,
            "init": args.init,
            "init_scale": args.init_scale,
        }))
        model, report = train_refiner(
            corpus, queries, artifacts.tool_table(args.refiner_tools),
            lambda q: artifacts.stage1(q.text, stage1_cfg, q.query_id),
            train_config(args), refiner_cfg, tools_kind=args.refiner_tools,
        )
        artifact = out_path(args, REFINER_FILE)
        model.save(artifact)

    loss_csv = out_path(args, f"{args.model}_loss.csv")
    write_loss_csv(report, loss_csv)
    finish(args, inputs, [artifact, loss_csv])
    final = report.train_losses[-1] if report.epochs else report.initial_train_loss
    status(f"Trained {args.model} for {len(report.epochs)} epochs (train loss {final}) -> {artifact}")


def cmd_retrieve(args: argparse.Namespace) -> None:
    """Print one RetrievalResult JSON line per query, in input order."""
    cfg = PipelineConfig(stage1_method=args.method, N=args.n, K=args.k)
    if args.query is None and args.queries_file is None:
        raise ValueError("Provide --query or --queries-file")
    pairs = [("", args.query)] if args.query is not None else read_texts(args.queries_file)
    artifacts = load_artifacts(artifacts_dir(args), require_refiner=not args.stage1_only)

    for query_id, text in pairs:
        if args.stage1_only:
            first = artifacts.stage1(text, cfg, query_id)
            result = first.model_copy(update={"candidates": first.candidates[:cfg.K]})
        else:
            result = retrieve_two_stage(text, artifacts, cfg, query_id)
        print(dumps_line(result.model_dump(mode="json")))
    finish(args, [args.queries_file] if args.queries_file else [])


def cmd_evaluate(args: argparse.Namespace) -> None:
    """Evaluate saved results, or run stage-1 and refined retrieval from artifacts."""
    corpus = load_corpus(args.tools, args.queries)
    eval_cfg = EvalConfig(ks=parse_list(args.ks, int))
    inputs = [args.tools, args.queries]
    runs: Dict[Tuple[str, str], List[RetrievalResult]] = {}

    if args.results:
        inputs.append(args.results)
        for result in read_results(args.results):
            runs.setdefault((result.method, result.stage), []).append(result)
    else:
        artifacts = load_artifacts(artifacts_dir(args), require_refiner=False)
        cfg = PipelineConfig(stage1_method=args.method, N=args.n, K=args.k or min(max(eval_cfg.ks), args.n))
        split_queries = corpus.queries_in(parse_list(args.split))
        runs[(cfg.stage1_method, "stage1")] = [artifacts.stage1(q.text, cfg, q.query_id) for q in split_queries]
        if artifacts.refiner is not None:
            runs[(cfg.stage1_method, "refined")] = [
                retrieve_two_stage(q.text, artifacts, cfg, q.query_id) for q in split_queries
            ]
        os.makedirs(args.out_dir, exist_ok=True)
        write_jsonl(out_path(args, "results.jsonl"),
                    (r.model_dump(mode="json") for results in runs.values() for r in results))

    os.makedirs(args.out_dir, exist_ok=True)
    reports = [evaluate(results, corpus, eval_cfg) for results in runs.values()]
    rows = compare_methods(runs, corpus, eval_cfg)
    outputs = [out_path(args, "eval_summary.csv")]
    write_summary_csv(rows, outputs[0])
    for report in reports:
        stem = f"eval_{report.method}_{report.stage}"
        write_report_json(report, out_path(args, f"{stem}.json"))
        write_per_query_csv(report, out_path(args, f"{stem}_per_query.csv"))
        outputs += [out_path(args, f"{stem}.json"), out_path(args, f"{stem}_per_query.csv")]
    finish(args, inputs, outputs)
    print(json.dumps(rows, indent=2))


def cmd_analyze(args: argparse.Namespace) -> None:
    """Failure rates, failed-query lengths, similarity gap and embedding point export."""
    corpus = load_corpus(args.tools, args.queries)
    os.makedirs(args.out_dir, exist_ok=True)
    inputs = [args.tools, args.queries]
    outputs = []
    summary: Dict[str, Any] = {}

    if args.results:
        inputs.append(args.results)
        results = read_results(args.results)
        by_run: Dict[Tuple[str, str], List[RetrievalResult]] = {}
        for result in results:
            by_run.setdefault((result.method, result.stage), []).append(result)
        rates = {f"{m}/{s}": failure_rates(rs, corpus, args.k).model_dump() for (m, s), rs in by_run.items()}
        lengths = [s.model_dump() for s in failed_query_lengths(results, corpus, args.k)]
        write_json(out_path(args, "failure_rates.json"), rates)
        write_json(out_path(args, "failed_query_lengths.json"), lengths)
        outputs += [out_path(args, "failure_rates.json"), out_path(args, "failed_query_lengths.json")]
        summary["failure_rates"] = {run: {"mean_rate": r["mean_rate"], "std_rate": r["std_rate"]}
                                    for run, r in rates.items()}
        summary["failed_query_lengths"] = lengths

    source = artifacts_dir(args)
    query_path = os.path.join(source, QUERY_FILE)
    if os.path.isfile(query_path):
        queries = EmbeddingMatrix.load(query_path)
        tables = {"tool2vec": EmbeddingMatrix.load(os.path.join(source, TOOL2VEC_FILE))}
        if os.path.isfile(os.path.join(source, DESCRIPTION_FILE)):
            tables["description"] = EmbeddingMatrix.load(os.path.join(source, DESCRIPTION_FILE))
        # precomputed description vectors may live in another space
        tables = {kind: table for kind, table in tables.items() if table.dim == queries.dim}
        splits = parse_list(args.split)
        for kind, table in tables.items():
            gap = similarity_gap(queries, table, corpus, args.negative_cap, args.seed, splits)
            export_similarity_csv(gap, out_path(args, f"similarity_{kind}.csv"))
            outputs.append(out_path(args, f"similarity_{kind}.csv"))
            summary[f"similarity_{kind}"] = {"positive": gap.positive.model_dump(),
                                             "negative": gap.negative.model_dump()}
        wanted = {q.query_id for q in corpus.queries_in(splits)}
        split_ids = tuple(i for i in queries.ids if i in wanted)
        points = {"query": EmbeddingMatrix("query", split_ids, queries.rows(split_ids), queries.normalized,
                                           queries.raw_ids & set(split_ids))}
        points.update(tables)
        export_embedding_points(points, out_path(args, "embedding_points.csv"))
        outputs.append(out_path(args, "embedding_points.csv"))

    write_json(out_path(args, "analysis.json"), summary)
    outputs.append(out_path(args, "analysis.json"))
    finish(args, inputs, outputs)
    print(json.dumps(summary, indent=2))


def _llm_client(args: argparse.Namespace):
    settings = settings_from_env(
        provider=args.llm_provider,
        model=args.llm_model,
        endpoint=args.llm_endpoint,
        api_key_env=args.llm_api_key_env,
        timeout=args.llm_timeout,
        fixture=args.mock_fixture,
    )
    return create_client(settings)


def cmd_gen_dataset(args: argparse.Namespace) -> None:
    """Generate a synthetic corpus over a tool library."""
    tools = load_tools(args.tools)
    cfg = DatagenConfig(**drop_none({
        "t_pool": args.t_pool,
        "m_min": args.m_min,
        "m_max": args.m_max,
        "n_incontext": args.n_incontext,
        "seed": args.seed,
        "rounds": args.rounds,
        "polish": not args.no_polish,
        "max_workers": args.max_workers,
        "library_instructions": args.library_instructions,
    }))
    inputs = [args.tools, args.examples, args.queries, args.mock_fixture]
    if args.examples:
        examples = load_examples(args.examples)
    elif args.queries:
        examples = examples_from_corpus(load_corpus(args.tools, args.queries))
    else:
        examples = []

    log = run_generation(tools, cfg, _llm_client(args), examples)
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = [out_path(args, name) for name in ("tools.jsonl", "queries.jsonl", "generation_log.jsonl")]
    export_dataset(log.records, tools, outputs[0], outputs[1])
    write_generation_log(log, outputs[2])
    finish(args, inputs, outputs)
    status(f"Generated {len(log.records)} queries in {cfg.rounds} rounds "
           f"({len(log.rejections)} rejected) -> {args.out_dir}")


def cmd_judge(args: argparse.Namespace) -> None:
    """Pairwise naturalness judging of two query files."""
    set_a = [text for _, text in read_texts(args.set_a)]
    set_b = [text for _, text in read_texts(args.set_b)]
    counts = judge_pairs(set_a, set_b, _llm_client(args), args.samples, args.seed)
    finish(args, [args.set_a, args.set_b, args.mock_fixture])
    print(json.dumps(counts.model_dump(), indent=2))


def cmd_stats(args: argparse.Namespace) -> None:
    stats = corpus_stats(load_corpus(args.tools, args.queries))
    finish(args, [args.tools, args.queries])
    print(json.dumps(stats.model_dump(mode="json"), indent=2))


def cmd_split(args: argparse.Namespace) -> None:
    corpus = split_train_val(load_corpus(args.tools, args.queries), args.ratio, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = [out_path(args, "tools.jsonl"), out_path(args, "queries.jsonl")]
    save_corpus(corpus, *outputs)
    finish(args, [args.tools, args.queries], outputs)
    status(f"Split written to {args.out_dir}")


def cmd_synth_corpus(args: argparse.Namespace) -> None:
    if args.kind == "disjoint":
        corpus = make_disjoint_corpus(**drop_none({"n_tools": args.n_tools, "seed": args.seed}))
    else:
        corpus = make_overlapping_corpus(**drop_none({"n_tools": args.n_tools, "n_queries": args.n_queries,
                                                      "seed": args.seed}))
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = [out_path(args, "tools.jsonl"), out_path(args, "queries.jsonl")]
    save_corpus(corpus, *outputs)
    finish(args, [], outputs)
    status(f"Wrote a {args.kind} corpus with {corpus.n_tools} tools and {len(corpus.queries)} queries")


# -------------------------------
# Gradient checks
# -------------------------------
def grad_check_instance(objective: str, rng: np.random.Generator):
    """A random small (objective, params, batch) triple for the named objective."""
    if objective == "mlc":
        H, T, B = 6, 4, 5
        X = rng.normal(size=(B, H))
        Y = (rng.random((B, T)) < 0.5).astype(np.float64)
        params = {"W": rng.normal(scale=0.5, size=(H, T)), "b": rng.normal(scale=0.5, size=T)}
        return MlcObjective(X, Y), params, list(range(B))
    if objective == "refiner":
        dim = 3
        queries = rng.normal(size=(4, dim))
        tools = rng.normal(size=(6, dim))
        items = [(int(rng.integers(4)), int(rng.integers(6)), float(rng.integers(2))) for _ in range(8)]
        cfg = RefinerConfig(hidden=(5,), init_scale=0.5)
        params = init_refiner_params(dim, cfg, int(rng.integers(2 ** 31)))
        return RefinerObjective(queries, tools), params, items
    if objective == "projection":
        dim = 4
        anchors = rng.normal(size=(5, dim))
        tools = rng.normal(size=(6, dim))
        triplets = [(int(rng.integers(5)), int(rng.integers(6)), int(rng.integers(6))) for _ in range(6)]
        # a large margin keeps every hinge active, away from its kink
        params = {"W": np.eye(dim) + 0.05 * rng.normal(size=(dim, dim))}
        return TripletProjectionObjective(anchors, tools, margin=10.0), params, triplets
    raise ValueError(f"Unknown objective {objective!r}")


def cmd_grad_check(args: argparse.Namespace) -> None:
    names = ["mlc", "refiner", "projection"] if args.objective == "all" else [args.objective]
    rng = np.random.default_rng(args.seed)
    summary = {}
    for name in names:
        worst = 0.0
        checked = 0
        for _ in range(args.instances):
            objective, params, batch = grad_check_instance(name, rng)
            report = grad_check(objective, params, batch, tolerance=args.tolerance)
            worst = max(worst, report.max_rel_error)
            checked += report.n_checked
        summary[name] = {"max_rel_error": worst, "n_checked": checked, "instances": args.instances,
                         "passed": worst < args.tolerance}
    finish(args, [])
    print(json.dumps(summary, indent=2))
    failed = [name for name, row in summary.items() if not row["passed"]]
    if failed:
        raise NumericalError(f"Gradient check failed for: {', '.join(failed)}")


# -------------------------------
# Parser
# -------------------------------
def _add_corpus_args(parser: argparse.ArgumentParser, queries_required: bool = True) -> None:
    parser.add_argument("--tools", required=True, help="tools.jsonl")
    parser.add_argument("--queries", required=queries_required, help="queries.jsonl")


def _add_llm_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--llm-provider", help="openai | gemini | claude | mock (env TOOLSIFT_LLM_PROVIDER)")
    parser.add_argument("--llm-model", help="Model name (env TOOLSIFT_LLM_MODEL)")
    parser.add_argument("--llm-endpoint", help="OpenAI-compatible base URL (env TOOLSIFT_LLM_ENDPOINT)")
    parser.add_argument("--llm-api-key-env", help="Variable holding the API key (env TOOLSIFT_LLM_API_KEY_ENV)")
    parser.add_argument("--llm-timeout", type=float, help="Seconds (env TOOLSIFT_LLM_TIMEOUT)")
    parser.add_argument("--mock-fixture", help="JSON Lines of {match, response} for the mock provider")


def _add_train_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--learning-rate", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--l2", type=float)


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="Seed for every random choice (default: 0)")
    common.add_argument("--out-dir", default=DEFAULT_OUT_DIR, help=f"(default: {DEFAULT_OUT_DIR})")
    common.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    common.add_argument("--verbose", action="store_true", help="Log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="toolsift",
        description="toolsift - Two-stage tool retrieval with usage-driven embeddings",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"toolsift {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs: Dict[str, argparse.ArgumentParser] = {}

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("build-embeddings", cmd_build_embeddings, "Build query, Tool2Vec and description embeddings")
    _add_corpus_args(p)
    p.add_argument("--dim", type=int)
    p.add_argument("--ngram-min", type=int)
    p.add_argument("--ngram-max", type=int)
    p.add_argument("--no-lowercase", action="store_true")
    p.add_argument("--query-vectors", help="Precomputed query vectors ({id, vec} lines)")
    p.add_argument("--description-vectors", help="Precomputed tool description vectors")
    p.add_argument("--splits", default="train", help="Splits feeding Tool2Vec (default: train)")
    p.add_argument("--workers", type=int, default=1)

    p = add("train", cmd_train, "Train mlc | refiner | projection")
    p.add_argument("model", choices=["mlc", "refiner", "projection"])
    _add_corpus_args(p)
    p.add_argument("--artifacts", help="Directory with embeddings/models (default: --out-dir)")
    _add_train_args(p)
    p.add_argument("--margin", type=float, help="Triplet margin (projection)")
    p.add_argument("--stage1-method", choices=STAGE1_METHODS, default="tool2vec")
    p.add_argument("--n", type=int, default=64, help="Stage-1 candidates per query (refiner)")
    p.add_argument("--hidden", help="Comma-separated hidden widths (refiner, default: 64)")
    p.add_argument("--init", choices=["uniform", "zeros"])
    p.add_argument("--init-scale", type=float)
    p.add_argument("--refiner-tools", choices=["tool2vec", "description"], default="tool2vec")

    p = add("retrieve", cmd_retrieve, "Two-stage retrieval; JSON lines on stdout")
    p.add_argument("--artifacts")
    p.add_argument("--query", help="A single query text")
    p.add_argument("--queries-file", help="JSON Lines of {text, query_id?}")
    p.add_argument("--method", choices=STAGE1_METHODS, default="tool2vec")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--stage1-only", action="store_true")

    p = add("evaluate", cmd_evaluate, "Recall@K / nDCG@K report")
    _add_corpus_args(p)
    p.add_argument("--results", help="Saved RetrievalResult JSON lines")
    p.add_argument("--artifacts")
    p.add_argument("--split", default="test")
    p.add_argument("--ks", default="3,5,7")
    p.add_argument("--method", choices=STAGE1_METHODS, default="tool2vec")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--k", type=int, help="Refined list length (default: largest K)")

    p = add("analyze", cmd_analyze, "Failure rates, failed-query lengths, similarity gap")
    _add_corpus_args(p)
    p.add_argument("--results")
    p.add_argument("--artifacts")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--split", default="test")
    p.add_argument("--negative-cap", type=int, default=50)

    p = add("gen-dataset", cmd_gen_dataset, "Generate a synthetic corpus with an LLM")
    _add_corpus_args(p, queries_required=False)
    p.add_argument("--examples", help="In-context examples ({instruction, functions} lines)")
    p.add_argument("--t-pool", type=int)
    p.add_argument("--m-min", type=int)
    p.add_argument("--m-max", type=int)
    p.add_argument("--n-incontext", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--no-polish", action="store_true")
    p.add_argument("--max-workers", type=int)
    p.add_argument("--library-instructions")
    _add_llm_args(p)

    p = add("judge", cmd_judge, "Pairwise naturalness judging of two query sets")
    p.add_argument("--set-a", required=True)
    p.add_argument("--set-b", required=True)
    p.add_argument("--samples", type=int, default=100)
    _add_llm_args(p)

    p = add("grad-check", cmd_grad_check, "Finite-difference check of every shipped objective")
    p.add_argument("--objective", choices=["mlc", "refiner", "projection", "all"], default="all")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = add("stats", cmd_stats, "Corpus statistics")
    _add_corpus_args(p)

    p = add("split", cmd_split, "Re-tag part of train as val")
    _add_corpus_args(p)
    p.add_argument("--ratio", type=float, default=0.8)

    p = add("synth-corpus", cmd_synth_corpus, "Write a constructed corpus")
    p.add_argument("--kind", choices=["disjoint", "overlapping"], default="disjoint")
    p.add_argument("--n-tools", type=int)
    p.add_argument("--n-queries", type=int)

    return parser, subs


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """
    Parse flags; when --config is given its keys become defaults of the chosen
    subcommand, and flags the file supplies are no longer required.
    """
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((token for token in argv if not token.startswith("-")), None)
    if known.config and command in subs:
        data = read_json(known.config)
        if not isinstance(data, dict):
            raise ValueError(f"{known.config} must hold a JSON object")
        defaults = {key.replace("-", "_"): value for key, value in data.items()}
        sub = subs[command]
        optional = {action.dest: action for action in sub._actions if action.option_strings}
        unknown = sorted(set(defaults) - set(optional))
        if unknown:
            raise ValueError(f"Unknown config keys for {command}: {', '.join(unknown)}")
        for dest in defaults:
            optional[dest].required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def command_line(argv: Optional[Sequence[str]] = None) -> None:
    """Parse arguments and dispatch to the chosen subcommand."""
    args = parse_args(argv)
    configure_logging(args.verbose)
    args.func(args)


def main(argv: Optional[Sequence[str]] = None):
    """Main entry point for the toolsift command-line tool."""
    try:
        command_line(argv)
    except KeyboardInterrupt:
        print("\nOperation cancelled.", file=sys.stderr)
        sys.exit(1)
    except ToolsiftError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(e.exit_code)
    except (FileNotFoundError, ValidationError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(2)


if __name__ == "__main__":
    main()
