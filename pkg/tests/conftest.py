"""Shared fixtures, random instance generators, and independent oracles.

The selection oracle here is a deliberately naive re-implementation of the
greedy loop: every step it recomputes every candidate's marginal utility
from the scoring components, with no caching or incremental novelty. The
fast implementation must match it exactly (ids, order, stop reason).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from budgetrank import scoring
from budgetrank.corpus import Document
from budgetrank.expansion import ExpandedQuery
from budgetrank.retrieval import CandidateSet
from budgetrank.scoring import Coefficients, LexicalStubCeScorer
from budgetrank.selection import SelectionConfig

DATA_DIR = Path(__file__).parent / "data"

WORD_POOL = (
    "earnings revenue growth risk esg market debt cash capital audit filing "
    "quarter segment margin guidance outlook dividend equity bond liquidity"
).split()


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture()
def stub_ce() -> LexicalStubCeScorer:
    return LexicalStubCeScorer()


def write_toy_config(tmp_path: Path, **overrides) -> Path:
    """A config file in tmp_path pointing at the bundled toy fixture data.

    ``overrides`` replace whole top-level sections (dict merged over defaults).
    """
    import yaml

    raw = {
        "paths": {
            "corpus": str(DATA_DIR / "corpus.jsonl"),
            "vocab": str(DATA_DIR / "vocab.jsonl"),
            "ce_scores": str(DATA_DIR / "ce_scores.tsv"),
            "qrels": str(DATA_DIR / "qrels.txt"),
            "index": str(tmp_path / "bm25_index.json"),
        },
        "expansion": {"m": 3, "phi": 0.995, "backend": "embedding", "query_weight": 0.7},
        "selection": {"budget_tokens": 1000, "tau": 0.0, "oversize_policy": "break"},
        "coefficients": {"alpha": 1.0, "beta": 1.0, "gamma": 0.5, "delta": 0.0},
        "retrieval": {"n": 10},
        "bm25": {"k1": 1.2, "b": 0.75},
        "fusion": {"mode": "rrf", "rrf_k": 60, "dense_weight": 0.5},
        "ce": {"backend": "lexical_stub"},
        "llm": {},
        "service": {"max_inline_candidates": 256},
    }
    for section, value in overrides.items():
        if isinstance(value, dict) and isinstance(raw.get(section), dict):
            raw[section] = {**raw[section], **value}
        else:
            raw[section] = value
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path


@pytest.fixture()
def toy_config_path(tmp_path) -> Path:
    return write_toy_config(tmp_path)


def unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.normal(size=dim)
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            return v / norm


def random_instance(
    rng: np.random.Generator,
    max_n: int = 12,
    dim: int | None = None,
    token_lo: int = 50,
    token_hi: int = 800,
    min_n: int = 0,
):
    """A random (expanded query, candidate set) pair with unit embeddings."""
    n = int(rng.integers(min_n, max_n + 1))
    if dim is None:
        dim = int(rng.integers(2, 9))
    docs = []
    for i in range(n):
        words = rng.choice(WORD_POOL, size=int(rng.integers(2, 7)), replace=True)
        docs.append(
            Document(
                id=f"doc{i:03d}",
                text=" ".join(words),
                token_count=int(rng.integers(token_lo, token_hi + 1)),
                embedding=unit_vector(rng, dim),
            )
        )
    query_words = rng.choice(WORD_POOL, size=int(rng.integers(1, 4)), replace=False)
    expanded = ExpandedQuery(
        original_text=" ".join(query_words),
        original_terms=tuple(dict.fromkeys(query_words)),
        combined_embedding=unit_vector(rng, dim),
        query_id=f"q{int(rng.integers(0, 10_000))}",
    )
    candidates = CandidateSet(
        query_id=expanded.query_id,
        candidates=tuple(sorted(((d, 0.0) for d in docs), key=lambda p: p[0].id)),
    )
    return expanded, candidates


def random_coefficients(rng: np.random.Generator) -> Coefficients:
    return Coefficients(
        alpha=float(rng.uniform(0.0, 2.0)),
        beta=float(rng.uniform(0.0, 2.0)),
        gamma=float(rng.uniform(0.0, 2.0)),
        delta=float(rng.uniform(0.0, 2.0)),
    )


def random_selection_config(
    rng: np.random.Generator, candidates: CandidateSet, policy: str = "break"
) -> SelectionConfig:
    token_sum = sum(d.token_count for d in candidates.documents())
    budget = int(rng.integers(100, max(token_sum, 100) + 200))
    tau_mode = rng.integers(0, 3)
    if tau_mode == 0:
        tau = float("-inf")
    elif tau_mode == 1:
        tau = 0.0
    else:
        tau = float(rng.uniform(-0.5, 2.5))
    return SelectionConfig(budget_tokens=budget, tau=tau, oversize_policy=policy)


def naive_select_oracle(expanded, candidates, coeffs, config, scorer):
    """Literal greedy loop: argmax of freshly recomputed marginal utilities.

    Returns (steps, total_tokens, stop_reason_str) where steps are
    (doc_id, gain, tokens_cum) tuples.
    """
    budget = config.budget_tokens
    normalizer = config.effective_normalizer
    remaining = {doc.id: doc for doc in candidates.documents()}
    selected_docs: list[Document] = []
    steps: list[tuple[str, float, int]] = []
    total = 0
    while True:
        if total >= budget:
            return steps, total, "budget_exact"
        if not remaining:
            return steps, total, "exhausted"
        best_id = None
        best_gain = -math.inf
        for doc_id in sorted(remaining):
            gain = scoring.marginal_utility(
                remaining[doc_id], selected_docs, expanded, coeffs, normalizer, scorer
            )
            if gain > best_gain:
                best_id = doc_id
                best_gain = gain
        if best_gain < config.tau:
            return steps, total, "threshold"
        doc = remaining[best_id]
        if total + doc.token_count <= budget:
            del remaining[best_id]
            selected_docs.append(doc)
            total += doc.token_count
            steps.append((best_id, best_gain, total))
        elif config.oversize_policy == "skip":
            del remaining[best_id]
        else:
            return steps, total, "oversize_break"


def assert_matches_oracle(result, oracle_steps, oracle_total, oracle_reason):
    assert [s.doc_id for s in result.selected] == [s[0] for s in oracle_steps]
    assert [s.gain for s in result.selected] == [s[1] for s in oracle_steps]
    assert [s.tokens_cum for s in result.selected] == [s[2] for s in oracle_steps]
    assert result.total_tokens == oracle_total
    assert result.stop_reason.value == oracle_reason


ACCEPTANCE_PREFIX = "tests/test_acceptance.py"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = set()
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            lines.add((name, "PASS" if outcome == "passed" else "FAIL"))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in sorted(lines):
        terminalreporter.write_line(f"{status}  {name}")
