"""Ranking metrics against brute-force formula oracles, token and latency reports."""

import itertools
import math

import numpy as np
import pytest

from budgetrank.errors import ValidationError
from budgetrank.evaluation import (
    MetricReport,
    Qrels,
    RunFile,
    bench_rerank,
    format_metric_table,
    ndcg_at_k,
    recall_at_k,
    token_report,
    write_curve_csv,
)
from budgetrank.selection import SelectionResult, SelectionStep, StopReason


def run_of(query_id, doc_ids):
    scores = [float(len(doc_ids) - i) for i in range(len(doc_ids))]
    return RunFile(rankings={query_id: list(zip(doc_ids, scores))})


def oracle_ndcg(doc_ids, grades, k):
    """Direct formula evaluation, independent of the implementation."""
    dcg = 0.0
    for i, doc_id in enumerate(doc_ids[:k], start=1):
        rel = grades.get(doc_id, 0)
        dcg += (2**rel - 1) / math.log2(i + 1)
    ideal = sorted(grades.values(), reverse=True)[:k]
    idcg = sum((2**rel - 1) / math.log2(i + 1) for i, rel in enumerate(ideal, start=1))
    return 0.0 if idcg == 0 else dcg / idcg


def oracle_recall(doc_ids, grades, k):
    relevant = {d for d, g in grades.items() if g >= 1}
    if not relevant:
        return 0.0
    return len(relevant & set(doc_ids[:k])) / len(relevant)


class TestNdcg:
    def test_ideal_ranking_scores_one(self):
        qrels = Qrels(judgments={"q1": {"a": 3, "b": 2, "c": 1}})
        report = ndcg_at_k(run_of("q1", ["a", "b", "c"]), qrels, 10)
        assert report.per_query["q1"] == pytest.approx(1.0)

    def test_single_relevant_at_rank_two(self):
        qrels = Qrels(judgments={"q1": {"b": 1}})
        report = ndcg_at_k(run_of("q1", ["a", "b"]), qrels, 10)
        assert report.per_query["q1"] == pytest.approx(1 / math.log2(3))

    def test_no_relevant_in_topk_scores_zero(self):
        qrels = Qrels(judgments={"q1": {"z": 2}})
        report = ndcg_at_k(run_of("q1", ["a", "b"]), qrels, 10)
        assert report.per_query["q1"] == 0.0

    def test_query_without_relevant_docs_flagged(self):
        qrels = Qrels(judgments={"q1": {"a": 0}})
        report = ndcg_at_k(run_of("q1", ["a"]), qrels, 10)
        assert report.per_query["q1"] == 0.0
        assert "q1" in report.no_relevant

    def test_unjudged_query_excluded_from_mean(self):
        qrels = Qrels(judgments={"q1": {"a": 1}})
        run = RunFile(rankings={
            "q1": [("a", 2.0)],
            "q9": [("a", 1.0)],
        })
        report = ndcg_at_k(run, qrels, 10)
        assert "q9" in report.unjudged
        assert report.mean == pytest.approx(1.0)

    def test_linear_gain_mode(self):
        qrels = Qrels(judgments={"q1": {"a": 3, "b": 1}})
        report = ndcg_at_k(run_of("q1", ["b", "a"]), qrels, 10, linear_gain=True)
        expected = (1 / math.log2(2) + 3 / math.log2(3)) / (3 / math.log2(2) + 1 / math.log2(3))
        assert report.per_query["q1"] == pytest.approx(expected)

    def test_k_below_one_rejected(self):
        with pytest.raises(ValidationError):
            ndcg_at_k(run_of("q1", ["a"]), Qrels(judgments={}), 0)


class TestRecall:
    def test_all_relevant_found(self):
        qrels = Qrels(judgments={"q1": {"a": 1, "b": 2}})
        report = recall_at_k(run_of("q1", ["a", "b", "c"]), qrels, 10)
        assert report.per_query["q1"] == 1.0

    def test_half_found(self):
        qrels = Qrels(judgments={"q1": {"a": 1, "z": 1}})
        report = recall_at_k(run_of("q1", ["a", "b"]), qrels, 10)
        assert report.per_query["q1"] == 0.5

    def test_k_beyond_run_length_is_noop(self):
        qrels = Qrels(judgments={"q1": {"a": 1}})
        short = recall_at_k(run_of("q1", ["a"]), qrels, 1)
        long = recall_at_k(run_of("q1", ["a"]), qrels, 50)
        assert short.per_query == long.per_query


class TestAgainstPermutationOracle:
    def test_all_permutations_of_small_rankings(self):
        grades_cases = [
            {"a": 1, "b": 0, "c": 2, "d": 0},
            {"a": 3, "b": 1, "c": 1, "d": 2, "e": 0},
            {"a": 0, "b": 0, "c": 0, "d": 1, "e": 2, "f": 3},
        ]
        for grades in grades_cases:
            qrels = Qrels(judgments={"q": grades})
            ids = sorted(grades)
            for k in (1, 2, 3, 10):
                for perm in itertools.permutations(ids):
                    run = run_of("q", list(perm))
                    got_ndcg = ndcg_at_k(run, qrels, k).per_query["q"]
                    got_recall = recall_at_k(run, qrels, k).per_query["q"]
                    assert got_ndcg == pytest.approx(oracle_ndcg(list(perm), grades, k), abs=1e-12)
                    assert got_recall == pytest.approx(oracle_recall(list(perm), grades, k), abs=1e-12)
                    assert 0.0 <= got_ndcg <= 1.0
                    assert 0.0 <= got_recall <= 1.0

    def test_recall_monotone_in_k_and_ndcg_bounded(self):
        # Recall@k can only grow with k. NDCG@k cannot be asserted monotone:
        # the ideal gain in the denominator grows with k too, and can outpace
        # the run's gain (see the explicit counterexample below).
        rng = np.random.default_rng(13)
        for _ in range(50):
            n = int(rng.integers(2, 8))
            ids = [f"d{i}" for i in range(n)]
            grades = {d: int(rng.integers(0, 4)) for d in ids}
            if all(g == 0 for g in grades.values()):
                grades[ids[0]] = 1
            qrels = Qrels(judgments={"q": grades})
            perm = list(rng.permutation(ids))
            run = run_of("q", perm)
            recalls = [recall_at_k(run, qrels, k).per_query["q"] for k in range(1, n + 2)]
            assert all(a <= b + 1e-12 for a, b in zip(recalls, recalls[1:]))
            for k in range(1, n + 2):
                assert 0.0 <= ndcg_at_k(run, qrels, k).per_query["q"] <= 1.0

    def test_ndcg_non_monotone_counterexample(self):
        # Run finds one of two equally relevant docs first: perfect at k=1,
        # but at k=2 the ideal ranking would have scored a second hit.
        qrels = Qrels(judgments={"q": {"a": 3, "b": 3}})
        run = run_of("q", ["a", "x"])
        at_1 = ndcg_at_k(run, qrels, 1).per_query["q"]
        at_2 = ndcg_at_k(run, qrels, 2).per_query["q"]
        assert at_1 == pytest.approx(1.0)
        assert at_2 < at_1


class TestTrecIo:
    def test_qrels_round_trip(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 d1 2\nq1 0 d2 0\nq2 0 d1 1\n")
        qrels = Qrels.from_trec(path)
        assert qrels.judgments["q1"]["d1"] == 2
        assert qrels.relevant_count("q1") == 1

    def test_qrels_duplicate_pair_rejected(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 d1 2\nq1 0 d1 1\n")
        with pytest.raises(ValidationError, match="duplicate"):
            Qrels.from_trec(path)

    def test_qrels_negative_grade_rejected(self):
        with pytest.raises(ValidationError, match="negative"):
            Qrels(judgments={"q": {"d": -1}})

    def test_run_round_trip(self, tmp_path):
        run = RunFile(rankings={"q1": [("d1", 2.5), ("d2", 1.0)]})
        path = tmp_path / "run.txt"
        run.to_trec(path)
        loaded = RunFile.from_trec(path)
        assert loaded == run

    def test_run_rejects_increasing_scores(self):
        with pytest.raises(ValidationError, match="increase"):
            RunFile(rankings={"q1": [("d1", 1.0), ("d2", 2.0)]})

    def test_run_rejects_duplicate_docs(self):
        with pytest.raises(ValidationError, match="duplicate"):
            RunFile(rankings={"q1": [("d1", 2.0), ("d1", 1.0)]})


def selection(total, n_steps=1, query_id="q"):
    steps = tuple(
        SelectionStep(doc_id=f"d{i}", gain=1.0, tokens_cum=(i + 1) * total // max(n_steps, 1))
        for i in range(n_steps)
    )
    return SelectionResult(
        query_id=query_id, selected=steps, total_tokens=total,
        stop_reason=StopReason.EXHAUSTED,
    )


class TestTokenReport:
    def test_single_selection_echoes(self):
        report = token_report([selection(1320)])
        assert report["mean"] == 1320
        assert report["median"] == 1320
        assert report["max"] == 1320

    def test_mean_and_median(self):
        report = token_report([selection(1000), selection(2000)])
        assert report["mean"] == 1500
        assert report["median"] == 1500
        assert report["max"] == 2000

    def test_all_empty_selections(self):
        report = token_report([selection(0, n_steps=0), selection(0, n_steps=0)])
        assert report["mean"] == 0

    def test_empty_list_rejected(self):
        with pytest.raises(ValidationError):
            token_report([])


class FakePipeline:
    """Just enough surface for bench_rerank."""

    def expand(self, query):
        return query

    def retrieve(self, expanded):
        return expanded

    def select(self, expanded, candidates):
        return None


class TestBench:
    def test_single_measurement_echoes(self):
        stats = bench_rerank(FakePipeline(), ["q"], repetitions=1, warmup=0)
        phase = stats["rerank"]
        assert phase["mean_ms"] == pytest.approx(phase["p50_ms"])
        assert phase["p50_ms"] == pytest.approx(phase["p95_ms"])

    def test_p50_not_above_p95(self):
        stats = bench_rerank(FakePipeline(), ["a", "b"], repetitions=5, warmup=1)
        for phase in stats.values():
            assert phase["p50_ms"] <= phase["p95_ms"] + 1e-12

    def test_phase_decomposition_present(self):
        stats = bench_rerank(FakePipeline(), ["a"], repetitions=2, warmup=0)
        assert set(stats) == {"expand", "retrieve", "rerank", "retrieve_rerank", "total"}

    def test_empty_queries_rejected(self):
        with pytest.raises(ValidationError):
            bench_rerank(FakePipeline(), [], repetitions=1)

    def test_bad_repetitions_rejected(self):
        with pytest.raises(ValidationError):
            bench_rerank(FakePipeline(), ["q"], repetitions=0)


def test_format_metric_table_lists_flags():
    report = MetricReport(
        name="recall@50",
        per_query={"q1": 1.0},
        mean=1.0,
        unjudged=("q9",),
        no_relevant=(),
    )
    text = format_metric_table([report])
    assert "recall@50" in text
    assert "q9" in text
    assert "mean" in text


def test_write_curve_csv(tmp_path):
    rows = [{"budget": 500, "mean_tokens": 480.0, "recall@50": 0.5}]
    path = tmp_path / "curve.csv"
    write_curve_csv(rows, path)
    content = path.read_text()
    assert "budget" in content.splitlines()[0]
    assert "500" in content
