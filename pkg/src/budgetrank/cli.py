"""Command-line interface: index, expand, retrieve, rerank, tune, eval, bench, serve.

Exit codes: 0 success, 1 validation failure, 2 I/O failure, 3 remote-backend
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation as evaluation_mod
from . import retrieval as retrieval_mod
from . import tuning as tuning_mod
from .config import PipelineConfig, load_config
from .corpus import ingest_jsonl
from .errors import PipelineStageError, RemoteBackendError, ValidationError
from .evaluation import Qrels, RunFile
from .pipeline import (
    Pipeline,
    candidates_to_json,
    expanded_query_to_json,
    selection_to_json,
)
from .selection import explain_selection

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_REMOTE = 3


def _exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, PipelineStageError):
        return _exit_code_for(exc.cause)
    if isinstance(exc, RemoteBackendError):
        return EXIT_REMOTE
    if isinstance(exc, (FileNotFoundError, OSError)):
        return EXIT_IO
    if isinstance(exc, (ValidationError, ValueError)):
        return EXIT_VALIDATION
    return EXIT_VALIDATION


def _load_queries(path: Path) -> list[tuple[str, str]]:
    """Read query lines; an optional leading 'id<TAB>' names the query."""
    if not path.exists():
        raise FileNotFoundError(f"queries file not found: {path}")
    queries: list[tuple[str, str]] = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if "\t" in line:
            query_id, text = line.split("\t", 1)
            queries.append((query_id.strip(), text.strip()))
        else:
            queries.append((f"q{i}", line))
    if not queries:
        raise ValidationError(f"queries file is empty: {path}")
    return queries


def _require_config(args) -> PipelineConfig:
    if not args.config:
        raise ValidationError("--config is required for this command")
    return load_config(args.config)


def _write_or_print(payload: str, output: str | None) -> None:
    if output:
        Path(output).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)


def cmd_index(args) -> int:
    config = _require_config(args)
    corpus_path = Path(args.corpus) if args.corpus else config.paths.corpus
    if corpus_path is None:
        raise ValidationError("paths.corpus: not configured and --corpus not given")
    if not corpus_path.exists():
        raise FileNotFoundError(f"corpus file not found: {corpus_path}")
    output = Path(args.output) if args.output else config.paths.index
    if output is None:
        raise ValidationError("paths.index: not configured and --output not given")
    if output.exists() and not args.force:
        raise ValidationError(f"index file already exists (use --force to rebuild): {output}")
    corpus = ingest_jsonl(corpus_path)
    index = retrieval_mod.build_bm25(corpus, k1=config.bm25.k1, b=config.bm25.b)
    output.parent.mkdir(parents=True, exist_ok=True)
    retrieval_mod.save_index(index, output)
    print(f"indexed {index.doc_count} documents, avg length {index.avg_doc_length:.2f} tokens")
    print(f"index written to {output}")
    return EXIT_OK


def cmd_expand(args) -> int:
    import dataclasses

    from .expansion import ExpansionConfig

    config = _require_config(args)
    expansion = config.expansion
    if any(v is not None for v in (args.m, args.phi, args.backend)):
        expansion = ExpansionConfig(
            m=args.m if args.m is not None else expansion.m,
            phi=args.phi if args.phi is not None else expansion.phi,
            backend=args.backend if args.backend is not None else expansion.backend,
            query_weight=expansion.query_weight,
        )
        config = dataclasses.replace(config, expansion=expansion)
    pipeline = Pipeline.from_config(config)
    queries = (
        _load_queries(Path(args.queries_file)) if args.queries_file else [("q1", args.query)]
    )
    lines = []
    for query_id, text in queries:
        expanded = pipeline.expand(text, query_id=query_id)
        lines.append(expanded_query_to_json(expanded))
    _write_or_print("\n".join(lines), args.output)
    return EXIT_OK


def cmd_retrieve(args) -> int:
    pipeline = Pipeline.from_config(_require_config(args))
    queries = (
        _load_queries(Path(args.queries_file)) if args.queries_file else [("q1", args.query)]
    )
    lines = []
    for query_id, text in queries:
        expanded = pipeline.expand(text, query_id=query_id)
        candidates = pipeline.retrieve(expanded, n=args.n)
        lines.append(candidates_to_json(candidates))
    _write_or_print("\n".join(lines), args.output)
    return EXIT_OK


def cmd_rerank(args) -> int:
    pipeline = Pipeline.from_config(_require_config(args))
    queries = (
        _load_queries(Path(args.queries_file)) if args.queries_file else [("q1", args.query)]
    )
    lines = []
    for query_id, text in queries:
        result = pipeline.run(text, query_id=query_id, budget=args.budget, tau=args.tau)
        lines.append(selection_to_json(result))
        if args.explain:
            print(explain_selection(result, result.components), file=sys.stderr)
    _write_or_print("\n".join(lines), args.output)
    return EXIT_OK


def cmd_tune(args) -> int:
    config = _require_config(args)
    pipeline = Pipeline.from_config(config)
    grid = tuning_mod.GridSpec(
        alphas=tuple(args.alphas) if args.alphas else tuning_mod.DEFAULT_GRID_VALUES,
        betas=tuple(args.betas) if args.betas else tuning_mod.DEFAULT_GRID_VALUES,
        gammas=tuple(args.gammas) if args.gammas else tuning_mod.DEFAULT_GRID_VALUES,
        deltas=tuple(args.deltas) if args.deltas else tuning_mod.DEFAULT_GRID_VALUES,
    )
    instances = tuning_mod.load_tuning_instances(
        Path(args.instances),
        pipeline.corpus,
        lambda text, qid: pipeline.expand(text, query_id=qid),
    )
    budget = args.budget if args.budget else config.selection.effective_normalizer
    coeffs, mean_loss = tuning_mod.grid_search(instances, grid, budget, pipeline.ce_scorer)
    payload = json.dumps(
        {**coeffs.as_dict(), "mean_loss": mean_loss, "grid_size": grid.size},
        separators=(",", ":"),
    )
    _write_or_print(payload, args.output)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _require_config(args)
    qrels_path = Path(args.qrels) if args.qrels else config.paths.qrels
    if qrels_path is None:
        raise ValidationError("paths.qrels: not configured and --qrels not given")
    qrels = Qrels.from_trec(qrels_path)
    reports = []
    if args.run:
        run = RunFile.from_trec(Path(args.run))
        reports.append(evaluation_mod.recall_at_k(run, qrels, args.recall_k))
        reports.append(evaluation_mod.ndcg_at_k(run, qrels, args.ndcg_k))
        print(evaluation_mod.format_metric_table(reports))
        if args.output:
            payload = {
                report.name: {"mean": report.mean, "per_query": report.per_query}
                for report in reports
            }
            Path(args.output).write_text(
                json.dumps(payload, separators=(",", ":")) + "\n", encoding="utf-8"
            )
    if args.curve_csv:
        if not args.queries_file or not args.budgets:
            raise ValidationError("--curve-csv requires --queries-file and --budgets")
        pipeline = Pipeline.from_config(config)
        queries = _load_queries(Path(args.queries_file))
        rows = evaluation_mod.recall_tokens_curve(
            pipeline, queries, qrels, args.budgets, k=args.recall_k
        )
        evaluation_mod.write_curve_csv(rows, Path(args.curve_csv))
        print(f"curve written to {args.curve_csv}")
    if not args.run and not args.curve_csv:
        raise ValidationError("eval needs --run and/or --curve-csv")
    return EXIT_OK


def cmd_bench(args) -> int:
    pipeline = Pipeline.from_config(_require_config(args))
    queries = [text for _, text in _load_queries(Path(args.queries_file))]
    stats = evaluation_mod.bench_rerank(
        pipeline, queries, repetitions=args.repetitions, warmup=args.warmup
    )
    payload = json.dumps(stats, separators=(",", ":"))
    _write_or_print(payload, args.output)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    pipeline = Pipeline.from_config(_require_config(args))
    serve(pipeline, host=args.host, port=args.port)
    return EXIT_OK


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="budgetrank",
        description="Budget-aware hybrid retrieval and greedy context selection.",
    )
    parser.add_argument("--config", help="path to the YAML pipeline config")
    parser.add_argument("--verbose", action="store_true", help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build and persist the BM25 index")
    p.add_argument("--corpus", help="corpus JSONL (overrides config)")
    p.add_argument("--output", help="index output path (overrides config)")
    p.add_argument("--force", action="store_true", help="overwrite an existing index")
    p.set_defaults(handler=cmd_index)

    p = sub.add_parser("expand", help="expand one query or a file of queries")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--query", help="query text")
    group.add_argument("--queries-file", help="file with one query per line")
    p.add_argument("--m", type=int, default=None, help="max accepted expansion terms")
    p.add_argument("--phi", type=float, default=None, help="informativeness threshold")
    p.add_argument("--backend", choices=["embedding", "remote_llm", "both"], default=None)
    p.add_argument("--output", help="write JSON lines here instead of stdout")
    p.set_defaults(handler=cmd_expand)

    p = sub.add_parser("retrieve", help="run hybrid retrieval for a query")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--query", help="query text")
    group.add_argument("--queries-file", help="file with one query per line")
    p.add_argument("--n", type=int, default=None, help="candidate pool size")
    p.add_argument("--output", help="write JSON lines here instead of stdout")
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser("rerank", help="expand, retrieve, and select under the budget")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--query", help="query text")
    group.add_argument("--queries-file", help="file with one query per line")
    p.add_argument("--budget", type=int, default=None, help="token budget override")
    p.add_argument("--tau", type=float, default=None, help="threshold override")
    p.add_argument("--explain", action="store_true", help="print the per-step report to stderr")
    p.add_argument("--output", help="write JSON lines here instead of stdout")
    p.set_defaults(handler=cmd_rerank)

    p = sub.add_parser("tune", help="grid-search coefficients against gold CE scores")
    p.add_argument("--instances", required=True, help="tuning instances JSONL")
    p.add_argument("--budget", type=int, default=None, help="budget for the length term")
    p.add_argument("--alphas", type=_float_list, help="comma-separated alpha grid")
    p.add_argument("--betas", type=_float_list, help="comma-separated beta grid")
    p.add_argument("--gammas", type=_float_list, help="comma-separated gamma grid")
    p.add_argument("--deltas", type=_float_list, help="comma-separated delta grid")
    p.add_argument("--output", help="write the JSON report here instead of stdout")
    p.set_defaults(handler=cmd_tune)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", help="TREC run file")
    p.add_argument("--qrels", help="TREC qrels file (overrides config)")
    p.add_argument("--recall-k", type=int, default=50)
    p.add_argument("--ndcg-k", type=int, default=10)
    p.add_argument("--output", help="write the JSON report here")
    p.add_argument("--curve-csv", help="write a recall-vs-tokens curve CSV here")
    p.add_argument("--budgets", type=_int_list, help="comma-separated budgets for the curve")
    p.add_argument("--queries-file", help="queries for the curve (id<TAB>text lines)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", help="measure expand/retrieve/rerank latency")
    p.add_argument("--queries-file", required=True, help="file with one query per line")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--output", help="write the JSON stats here instead of stdout")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(handler=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            logger.exception("command failed")
        return _exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
