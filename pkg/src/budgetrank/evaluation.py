"""Ranking metrics, token accounting, latency benchmarking, TREC-format I/O.

NDCG uses burst gain (2^rel - 1) with a log2(i+1) discount by default; a
linear-gain mode is available. Queries present in a run but missing from the
qrels are excluded from means and reported; judged queries with no relevant
document score 0 and are flagged separately.
"""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .selection import SelectionResult


@dataclass(frozen=True)
class Qrels:
    """Graded relevance judgments keyed by query id, then doc id."""

    judgments: dict[str, dict[str, int]]

    def __post_init__(self):
        for query_id, grades in self.judgments.items():
            for doc_id, grade in grades.items():
                if grade < 0:
                    raise ValidationError(
                        f"qrels: negative grade {grade} for ('{query_id}', '{doc_id}')"
                    )

    @classmethod
    def from_trec(cls, path: str | Path) -> "Qrels":
        """Parse TREC qrels lines: query_id 0 doc_id grade."""
        path = Path(path)
        judgments: dict[str, dict[str, int]] = {}
        with path.open("r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                parts = line.split()
                if len(parts) != 4:
                    raise ValidationError(
                        f"{path}: line {line_no}: expected 'query_id 0 doc_id grade'"
                    )
                query_id, _, doc_id, raw = parts
                try:
                    grade = int(raw)
                except ValueError:
                    raise ValidationError(
                        f"{path}: line {line_no}: grade '{raw}' is not an integer"
                    ) from None
                per_query = judgments.setdefault(query_id, {})
                if doc_id in per_query:
                    raise ValidationError(
                        f"{path}: line {line_no}: duplicate pair ('{query_id}', '{doc_id}')"
                    )
                per_query[doc_id] = grade
        return cls(judgments=judgments)

    def relevant_count(self, query_id: str) -> int:
        return sum(1 for grade in self.judgments.get(query_id, {}).values() if grade >= 1)


@dataclass(frozen=True)
class RunFile:
    """Ranked outputs per query: ordered (doc_id, score) with non-increasing scores."""

    rankings: dict[str, list[tuple[str, float]]]

    def __post_init__(self):
        for query_id, ranked in self.rankings.items():
            seen: set[str] = set()
            previous: float | None = None
            for doc_id, score in ranked:
                if doc_id in seen:
                    raise ValidationError(
                        f"run: duplicate doc '{doc_id}' for query '{query_id}'"
                    )
                seen.add(doc_id)
                if previous is not None and score > previous:
                    raise ValidationError(
                        f"run: scores increase at doc '{doc_id}' for query '{query_id}'"
                    )
                previous = score

    @classmethod
    def from_trec(cls, path: str | Path) -> "RunFile":
        """Parse TREC run lines: query_id Q0 doc_id rank score tag."""
        path = Path(path)
        rankings: dict[str, list[tuple[str, float]]] = {}
        with path.open("r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                parts = line.split()
                if len(parts) != 6:
                    raise ValidationError(
                        f"{path}: line {line_no}: expected 'query_id Q0 doc_id rank score tag'"
                    )
                query_id, _, doc_id, _, raw_score, _ = parts
                try:
                    score = float(raw_score)
                except ValueError:
                    raise ValidationError(
                        f"{path}: line {line_no}: score '{raw_score}' is not a number"
                    ) from None
                rankings.setdefault(query_id, []).append((doc_id, score))
        return cls(rankings=rankings)

    def to_trec(self, path: str | Path, tag: str = "budgetrank") -> None:
        lines = []
        for query_id, ranked in self.rankings.items():
            for rank, (doc_id, score) in enumerate(ranked, start=1):
                lines.append(f"{query_id} Q0 {doc_id} {rank} {score!r} {tag}")
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass(frozen=True)
class MetricReport:
    """Per-query metric values plus queries excluded or flagged along the way."""

    name: str
    per_query: dict[str, float]
    mean: float
    unjudged: tuple[str, ...] = ()
    no_relevant: tuple[str, ...] = ()


def _gain(grade: int, linear: bool) -> float:
    return float(grade) if linear else float(2**grade - 1)


def ndcg_at_k(run: RunFile, qrels: Qrels, k: int, linear_gain: bool = False) -> MetricReport:
    """Normalized DCG at cutoff k, averaged over judged queries."""
    if k < 1:
        raise ValidationError(f"ndcg: k {k} must be >= 1")
    per_query: dict[str, float] = {}
    unjudged: list[str] = []
    no_relevant: list[str] = []
    for query_id, ranked in run.rankings.items():
        grades = qrels.judgments.get(query_id)
        if grades is None:
            unjudged.append(query_id)
            continue
        ideal = sorted(grades.values(), reverse=True)[:k]
        idcg = sum(_gain(g, linear_gain) / math.log2(i + 1) for i, g in enumerate(ideal, start=1))
        if idcg == 0.0:
            no_relevant.append(query_id)
            per_query[query_id] = 0.0
            continue
        dcg = sum(
            _gain(grades.get(doc_id, 0), linear_gain) / math.log2(i + 1)
            for i, (doc_id, _) in enumerate(ranked[:k], start=1)
        )
        per_query[query_id] = dcg / idcg
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return MetricReport(
        name=f"ndcg@{k}",
        per_query=per_query,
        mean=mean,
        unjudged=tuple(unjudged),
        no_relevant=tuple(no_relevant),
    )


def recall_at_k(run: RunFile, qrels: Qrels, k: int) -> MetricReport:
    """Fraction of relevant (grade >= 1) documents found in the top k."""
    if k < 1:
        raise ValidationError(f"recall: k {k} must be >= 1")
    per_query: dict[str, float] = {}
    unjudged: list[str] = []
    no_relevant: list[str] = []
    for query_id, ranked in run.rankings.items():
        grades = qrels.judgments.get(query_id)
        if grades is None:
            unjudged.append(query_id)
            continue
        total_relevant = sum(1 for g in grades.values() if g >= 1)
        if total_relevant == 0:
            no_relevant.append(query_id)
            per_query[query_id] = 0.0
            continue
        found = sum(1 for doc_id, _ in ranked[:k] if grades.get(doc_id, 0) >= 1)
        per_query[query_id] = found / total_relevant
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return MetricReport(
        name=f"recall@{k}",
        per_query=per_query,
        mean=mean,
        unjudged=tuple(unjudged),
        no_relevant=tuple(no_relevant),
    )


def token_report(selections: Sequence[SelectionResult]) -> dict[str, float]:
    """Mean, median, and max of total selected tokens."""
    if not selections:
        raise ValidationError("token report requires at least one selection")
    totals = [s.total_tokens for s in selections]
    return {
        "count": len(totals),
        "mean": statistics.fmean(totals),
        "median": float(statistics.median(totals)),
        "max": max(totals),
    }


def _latency_stats(samples_ms: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(samples_ms, dtype=np.float64)
    return {
        "mean_ms": float(arr.mean()),
        "p50_ms": float(np.percentile(arr, 50)),
        "p95_ms": float(np.percentile(arr, 95)),
    }


def bench_rerank(
    pipeline,
    queries: Sequence[str],
    repetitions: int,
    warmup: int = 1,
) -> dict[str, dict[str, float]]:
    """Time the expand/retrieve/rerank phases over repeated runs.

    Returns per-phase stats plus the combined retrieve+rerank and total
    wall-clock, all in milliseconds from a monotonic clock. Warm-up rounds
    run the full workload and are excluded from the stats.
    """
    if not queries:
        raise ValidationError("benchmark requires at least one query")
    if repetitions < 1:
        raise ValidationError(f"benchmark repetitions {repetitions} must be >= 1")
    if warmup < 0:
        raise ValidationError(f"benchmark warmup {warmup} must be >= 0")

    phases = ("expand", "retrieve", "rerank", "retrieve_rerank", "total")
    samples: dict[str, list[float]] = {phase: [] for phase in phases}
    for round_no in range(warmup + repetitions):
        measured = round_no >= warmup
        for query in queries:
            t0 = time.perf_counter()
            expanded = pipeline.expand(query)
            t1 = time.perf_counter()
            candidates = pipeline.retrieve(expanded)
            t2 = time.perf_counter()
            pipeline.select(expanded, candidates)
            t3 = time.perf_counter()
            if measured:
                samples["expand"].append((t1 - t0) * 1e3)
                samples["retrieve"].append((t2 - t1) * 1e3)
                samples["rerank"].append((t3 - t2) * 1e3)
                samples["retrieve_rerank"].append((t3 - t1) * 1e3)
                samples["total"].append((t3 - t0) * 1e3)
    return {phase: _latency_stats(values) for phase, values in samples.items()}


def recall_tokens_curve(
    pipeline,
    queries: Sequence[tuple[str, str]],
    qrels: Qrels,
    budgets: Sequence[int],
    k: int = 50,
) -> list[dict[str, float]]:
    """Recall@k and mean selected tokens per budget, for trade-off curves.

    ``queries`` are (query_id, query_text) pairs; each budget runs the full
    pipeline and evaluates the selection order as a ranking.
    """
    if not queries:
        raise ValidationError("curve requires at least one query")
    rows: list[dict[str, float]] = []
    for budget in budgets:
        selections = []
        rankings: dict[str, list[tuple[str, float]]] = {}
        for query_id, query_text in queries:
            result = pipeline.run(query_text, query_id=query_id, budget=budget)
            selections.append(result)
            ranked = [
                (step.doc_id, float(len(result.selected) - i))
                for i, step in enumerate(result.selected)
            ]
            rankings[query_id] = ranked
        report = recall_at_k(RunFile(rankings=rankings), qrels, k)
        tokens = token_report(selections)
        rows.append(
            {
                "budget": budget,
                "mean_tokens": tokens["mean"],
                f"recall@{k}": report.mean,
            }
        )
    return rows


def write_curve_csv(rows: Sequence[dict[str, float]], path: str | Path) -> None:
    if not rows:
        raise ValidationError("curve CSV requires at least one row")
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def format_metric_table(reports: Sequence[MetricReport]) -> str:
    """Aligned plain-text table of per-query and mean metric values."""
    query_ids = sorted({qid for report in reports for qid in report.per_query})
    name_width = max([len("query")] + [len(qid) for qid in query_ids])
    header = f"{'query':<{name_width}}  " + "  ".join(f"{r.name:>12}" for r in reports)
    lines = [header, "-" * len(header)]
    for qid in query_ids:
        cells = "  ".join(
            f"{report.per_query.get(qid, float('nan')):>12.4f}" for report in reports
        )
        lines.append(f"{qid:<{name_width}}  {cells}")
    means = "  ".join(f"{report.mean:>12.4f}" for report in reports)
    lines.append(f"{'mean':<{name_width}}  {means}")
    for report in reports:
        if report.unjudged:
            lines.append(f"# {report.name}: unjudged queries excluded: {list(report.unjudged)}")
        if report.no_relevant:
            lines.append(f"# {report.name}: queries with no relevant docs: {list(report.no_relevant)}")
    return "\n".join(lines)


__all__ = [
    "MetricReport",
    "Qrels",
    "RunFile",
    "bench_rerank",
    "format_metric_table",
    "ndcg_at_k",
    "recall_at_k",
    "recall_tokens_curve",
    "token_report",
    "write_curve_csv",
]
