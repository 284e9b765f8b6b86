"""The four utility components behind marginal gain: sim, nov, len, ce.

Marginal utility of a document d against an already-selected set S is

    alpha * sim(q', d) + beta * nov(d | S) - gamma * len_norm(d) + delta * ce(q', d)

where nov is the MMR-style complement of the maximum similarity to S (1.0
for an empty S), len_norm is tokens over a budget normalizer, and ce comes
from a pluggable cross-encoder backend. Only nov depends on S, which is what
makes utility diminishing as the selection grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document, Tokenizer, tokenize
from .errors import RemoteBackendError, ValidationError
from .expansion import ExpandedQuery


@dataclass(frozen=True)
class Coefficients:
    """The four non-negative utility weights."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5
    delta: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise ValidationError(f"coefficients.{name}: {value} must be finite and >= 0")

    def as_dict(self) -> dict[str, float]:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "delta": self.delta,
        }


@dataclass(frozen=True)
class UtilityComponents:
    """Per-(query, doc, selection) component values feeding one marginal gain."""

    sim: float
    nov: float
    len_norm: float
    ce: float


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1] to absorb float drift."""
    value = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return max(-1.0, min(1.0, value))


def sim(expanded_query: ExpandedQuery, doc: Document) -> float:
    """Cosine between the combined query embedding and the document embedding."""
    if expanded_query.combined_embedding is None:
        raise ValidationError("sim: expanded query has no combined embedding")
    if doc.embedding is None:
        raise ValidationError(f"sim: document '{doc.id}' has no embedding")
    return cosine(expanded_query.combined_embedding, doc.embedding)


def nov(doc: Document, selected: Sequence[Document]) -> float:
    """1 minus the maximum cosine to any selected document; 1.0 for empty S."""
    if doc.embedding is None:
        raise ValidationError(f"nov: document '{doc.id}' has no embedding")
    if not selected:
        return 1.0
    best = -1.0
    for other in selected:
        if other.embedding is None:
            raise ValidationError(f"nov: selected document '{other.id}' has no embedding")
        value = cosine(doc.embedding, other.embedding)
        if value > best:
            best = value
    return 1.0 - best


def len_norm(doc: Document, budget: int) -> float:
    """Token count scaled by the budget normalizer."""
    if budget < 1:
        raise ValidationError(f"len_norm: budget {budget} must be >= 1")
    return doc.token_count / budget


class CeScorer:
    """Cross-encoder evidence backend; scores are deterministic per instance."""

    backend = "abstract"

    def score(self, expanded_query: ExpandedQuery, doc: Document) -> float:
        raise NotImplementedError


class LexicalStubCeScorer(CeScorer):
    """Deterministic stand-in: token-overlap F1 between q' terms and doc terms."""

    backend = "lexical_stub"

    def __init__(self, tokenizer: Tokenizer = tokenize):
        self._tokenizer = tokenizer

    def score(self, expanded_query: ExpandedQuery, doc: Document) -> float:
        query_terms = set(expanded_query.all_terms())
        doc_terms = set(self._tokenizer(doc.text))
        if not query_terms or not doc_terms:
            return 0.0
        overlap = len(query_terms & doc_terms)
        if overlap == 0:
            return 0.0
        precision = overlap / len(doc_terms)
        recall = overlap / len(query_terms)
        return 2.0 * precision * recall / (precision + recall)


class PrecomputedCeScorer(CeScorer):
    """Scores loaded from a TSV table, min-max normalized per query at load.

    Queries whose scores are all identical normalize to 0.0 (no contrast, no
    evidence). A missing (query, doc) pair is an error naming the pair.
    """

    backend = "precomputed"

    def __init__(self, table: dict[str, dict[str, float]]):
        self._table = {
            query_id: _min_max_normalize(scores) for query_id, scores in table.items()
        }

    @classmethod
    def from_tsv(cls, path: str | Path) -> "PrecomputedCeScorer":
        path = Path(path)
        table: dict[str, dict[str, float]] = {}
        with path.open("r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise ValidationError(
                        f"{path}: line {line_no}: expected 'query_id<TAB>doc_id<TAB>score'"
                    )
                query_id, doc_id, raw = parts
                try:
                    score = float(raw)
                except ValueError:
                    raise ValidationError(
                        f"{path}: line {line_no}: score '{raw}' is not a number"
                    ) from None
                table.setdefault(query_id, {})[doc_id] = score
        return cls(table)

    def score(self, expanded_query: ExpandedQuery, doc: Document) -> float:
        query_id = expanded_query.query_id
        if query_id is None:
            raise ValidationError("precomputed ce: expanded query has no query_id")
        per_query = self._table.get(query_id)
        if per_query is None or doc.id not in per_query:
            raise ValidationError(
                f"precomputed ce: no score for pair ('{query_id}', '{doc.id}')"
            )
        return per_query[doc.id]


def _min_max_normalize(scores: dict[str, float]) -> dict[str, float]:
    lo = min(scores.values())
    hi = max(scores.values())
    span = hi - lo
    if span == 0.0:
        return {doc_id: 0.0 for doc_id in scores}
    return {doc_id: (value - lo) / span for doc_id, value in scores.items()}


class RemoteCeScorer(CeScorer):
    """Remote cross-encoder endpoint; responses clamped to [0, 1] and cached."""

    backend = "remote"

    def __init__(self, endpoint: str, token: str | None = None, timeout: float = 10.0, session=None):
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint = endpoint
        self.token = token
        self.timeout = timeout
        self._session = session
        self._cache: dict[tuple[str, str], float] = {}

    def score(self, expanded_query: ExpandedQuery, doc: Document) -> float:
        key = (expanded_query.expanded_text(), doc.id)
        if key in self._cache:
            return self._cache[key]
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        payload = {
            "query": expanded_query.expanded_text(),
            "passages": [{"id": doc.id, "text": doc.text}],
        }
        try:
            response = self._session.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
        except Exception as exc:
            raise RemoteBackendError(
                f"cross-encoder backend unreachable: {exc}", endpoint=self.endpoint
            ) from exc
        if response.status_code != 200:
            raise RemoteBackendError(
                f"cross-encoder backend returned status {response.status_code}",
                endpoint=self.endpoint,
                status=response.status_code,
            )
        try:
            body = response.json()
            scores = {entry["id"]: float(entry["score"]) for entry in body["scores"]}
            raw = scores[doc.id]
        except (ValueError, KeyError, TypeError) as exc:
            raise RemoteBackendError(
                f"cross-encoder backend response malformed: {exc}", endpoint=self.endpoint
            ) from exc
        value = max(0.0, min(1.0, raw))
        self._cache[key] = value
        return value


def ce(expanded_query: ExpandedQuery, doc: Document, scorer: CeScorer) -> float:
    """Cross-encoder evidence for (q', d) from the configured backend."""
    return scorer.score(expanded_query, doc)


def combine(coeffs: Coefficients, components: UtilityComponents) -> float:
    """Weighted combination of the four components, in one fixed evaluation order.

    Every caller that produces a gain goes through here so cached and
    recomputed paths agree bitwise.
    """
    return (
        coeffs.alpha * components.sim
        + coeffs.beta * components.nov
        - coeffs.gamma * components.len_norm
        + coeffs.delta * components.ce
    )


def utility_components(
    doc: Document,
    selected: Sequence[Document],
    expanded_query: ExpandedQuery,
    budget: int,
    scorer: CeScorer,
) -> UtilityComponents:
    return UtilityComponents(
        sim=sim(expanded_query, doc),
        nov=nov(doc, selected),
        len_norm=len_norm(doc, budget),
        ce=ce(expanded_query, doc, scorer),
    )


def marginal_utility(
    doc: Document,
    selected: Sequence[Document],
    expanded_query: ExpandedQuery,
    coeffs: Coefficients,
    budget: int,
    scorer: CeScorer,
) -> float:
    """Marginal gain of adding doc to the selected set; only nov depends on S."""
    return combine(coeffs, utility_components(doc, selected, expanded_query, budget, scorer))


__all__ = [
    "CeScorer",
    "Coefficients",
    "LexicalStubCeScorer",
    "PrecomputedCeScorer",
    "RemoteCeScorer",
    "UtilityComponents",
    "ce",
    "combine",
    "cosine",
    "len_norm",
    "marginal_utility",
    "nov",
    "sim",
    "utility_components",
]
