"""First-stage candidate generation: BM25, dense cosine search, hybrid fusion.

The lexical side is an Okapi BM25 inverted index with +1-smoothed IDF
(k1=1.2, b=0.75 by default). The dense side is exact brute-force cosine over
every embedded document. The two ranked lists are fused with Reciprocal Rank
Fusion (constant 60) or, alternatively, a min-max-normalized weighted sum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, Document, Tokenizer, tokenize
from .errors import ValidationError
from .expansion import ExpandedQuery

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_RRF_K = 60.0

INDEX_FORMAT = "budgetrank-bm25"
INDEX_VERSION = 1


@dataclass(frozen=True)
class Bm25Index:
    """Inverted index with the statistics BM25 scoring needs."""

    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    doc_count: int
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def __post_init__(self):
        if self.doc_count <= 0 or self.doc_count != len(self.doc_lengths):
            raise ValidationError("bm25 index: doc_count must match doc_lengths")
        mean = sum(self.doc_lengths.values()) / self.doc_count
        if not math.isclose(self.avg_doc_length, mean, rel_tol=1e-12, abs_tol=1e-12):
            raise ValidationError("bm25 index: avg_doc_length disagrees with doc_lengths")
        if not 0.0 <= self.b <= 1.0:
            raise ValidationError(f"bm25.b: {self.b} outside [0, 1]")
        for term, entries in self.postings.items():
            for doc_id, _ in entries:
                if doc_id not in self.doc_lengths:
                    raise ValidationError(
                        f"bm25 index: posting for '{term}' references unknown doc '{doc_id}'"
                    )


@dataclass(frozen=True)
class CandidateSet:
    """Fused retrieval output: documents sorted by descending score.

    Ties are broken by ascending document id and ids are unique.
    """

    query_id: str
    candidates: tuple[tuple[Document, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        seen: set[str] = set()
        previous: tuple[float, str] | None = None
        for doc, score in self.candidates:
            if doc.id in seen:
                raise ValidationError(f"candidate set: duplicate document id '{doc.id}'")
            seen.add(doc.id)
            key = (-score, doc.id)
            if previous is not None and key < previous:
                raise ValidationError("candidate set: not sorted by descending score")
            previous = key

    def __len__(self) -> int:
        return len(self.candidates)

    def documents(self) -> list[Document]:
        return [doc for doc, _ in self.candidates]

    def doc_ids(self) -> list[str]:
        return [doc.id for doc, _ in self.candidates]


def build_bm25(
    corpus: Corpus,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
    tokenizer: Tokenizer = tokenize,
) -> Bm25Index:
    """Build an inverted index over every document's tokens."""
    if len(corpus) == 0:
        raise ValidationError("cannot build a BM25 index over an empty corpus")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for doc in corpus:
        tokens = tokenizer(doc.text)
        doc_lengths[doc.id] = len(tokens)
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((doc.id, tf))
    avg = sum(doc_lengths.values()) / len(doc_lengths)
    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        doc_count=len(doc_lengths),
        k1=k1,
        b=b,
    )


def _idf(index: Bm25Index, term: str) -> float:
    entries = index.postings.get(term)
    if not entries:
        return 0.0
    df = len(entries)
    return math.log(1.0 + (index.doc_count - df + 0.5) / (df + 0.5))


def bm25_score(index: Bm25Index, query_terms: Sequence[str], doc_id: str) -> float:
    """Okapi BM25 score of one document for the given query terms.

    Terms absent from the index contribute 0; an unknown doc_id is an error.
    """
    if doc_id not in index.doc_lengths:
        raise ValidationError(f"unknown document id '{doc_id}'")
    dl = index.doc_lengths[doc_id]
    norm = index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_length)
    score = 0.0
    for term in query_terms:
        entries = index.postings.get(term)
        if not entries:
            continue
        tf = 0
        for entry_id, entry_tf in entries:
            if entry_id == doc_id:
                tf = entry_tf
                break
        if tf == 0:
            continue
        score += _idf(index, term) * tf * (index.k1 + 1.0) / (tf + norm)
    return score


def bm25_rank(index: Bm25Index, query_terms: Sequence[str], n: int) -> list[tuple[str, float]]:
    """Top-n documents by BM25, restricted to docs sharing a query term.

    Accumulates the same per-term expression as bm25_score, so the two paths
    agree on every document they both touch.
    """
    scores: dict[str, float] = {}
    for term in query_terms:
        entries = index.postings.get(term)
        if not entries:
            continue
        idf = _idf(index, term)
        for doc_id, tf in entries:
            dl = index.doc_lengths[doc_id]
            norm = index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_length)
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (index.k1 + 1.0) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:n]


def dense_scores(query_embedding: np.ndarray, corpus: Corpus) -> dict[str, float]:
    """Exact brute-force cosine of the query against every embedded document."""
    query = np.asarray(query_embedding, dtype=np.float64)
    docs = corpus.embedded_documents()
    if not docs:
        return {}
    if corpus.embedding_dim is not None and query.shape[0] != corpus.embedding_dim:
        raise ValidationError(
            f"query embedding dimension {query.shape[0]} differs from corpus "
            f"dimension {corpus.embedding_dim}"
        )
    matrix = np.stack([doc.embedding for doc in docs])
    norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(query)
    sims = np.clip((matrix @ query) / norms, -1.0, 1.0)
    return {doc.id: float(sim) for doc, sim in zip(docs, sims)}


def dense_rank(query_embedding: np.ndarray, corpus: Corpus, n: int) -> list[tuple[str, float]]:
    scores = dense_scores(query_embedding, corpus)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:n]


def rrf_fuse(lists: Sequence[Sequence[tuple[str, float]]], k: float = DEFAULT_RRF_K) -> dict[str, float]:
    """Reciprocal Rank Fusion: fused(d) = sum over lists of 1/(k + rank), 1-based."""
    fused: dict[str, float] = {}
    for ranked in lists:
        for rank, (doc_id, _) in enumerate(ranked, start=1):
            fused[doc_id] = fused.get(doc_id, 0.0) + 1.0 / (k + rank)
    return fused


def weighted_fuse(
    lexical: Sequence[tuple[str, float]],
    dense: Sequence[tuple[str, float]],
    dense_weight: float,
) -> dict[str, float]:
    """Min-max normalize each list to [0, 1], then combine with the given weight."""
    if not 0.0 <= dense_weight <= 1.0:
        raise ValidationError(f"fusion.dense_weight: {dense_weight} outside [0, 1]")

    def normalized(ranked: Sequence[tuple[str, float]]) -> dict[str, float]:
        if not ranked:
            return {}
        values = [score for _, score in ranked]
        lo, hi = min(values), max(values)
        span = hi - lo
        if span == 0.0:
            return {doc_id: 1.0 for doc_id, _ in ranked}
        return {doc_id: (score - lo) / span for doc_id, score in ranked}

    fused: dict[str, float] = {}
    for doc_id, value in normalized(lexical).items():
        fused[doc_id] = fused.get(doc_id, 0.0) + (1.0 - dense_weight) * value
    for doc_id, value in normalized(dense).items():
        fused[doc_id] = fused.get(doc_id, 0.0) + dense_weight * value
    return fused


def hybrid_retrieve(
    expanded_query: ExpandedQuery,
    index: Bm25Index,
    corpus: Corpus,
    n: int,
    *,
    fusion_mode: str = "rrf",
    rrf_k: float = DEFAULT_RRF_K,
    dense_weight: float = 0.5,
) -> CandidateSet:
    """Fuse top-n BM25 and top-n dense lists into a candidate set of size <= n.

    The BM25 query is the flat union of original and expansion terms; the
    dense query is the expanded query's combined embedding (skipped when
    absent). Fused ties are broken by ascending document id.
    """
    if n < 1:
        raise ValidationError(f"retrieval.n: {n} must be >= 1")
    query_terms = list(expanded_query.all_terms())
    lexical = bm25_rank(index, query_terms, n)
    if expanded_query.combined_embedding is not None:
        dense = dense_rank(expanded_query.combined_embedding, corpus, n)
    else:
        dense = []

    if fusion_mode == "rrf":
        fused = rrf_fuse([lexical, dense] if dense else [lexical], k=rrf_k)
    elif fusion_mode == "weighted":
        if dense:
            fused = weighted_fuse(lexical, dense, dense_weight)
        else:
            fused = weighted_fuse(lexical, [], 0.0)
    else:
        raise ValidationError(f"fusion.mode: unknown mode '{fusion_mode}'")

    ranked_ids = sorted(fused.items(), key=lambda item: (-item[1], item[0]))[:n]
    candidates = tuple((corpus.get(doc_id), score) for doc_id, score in ranked_ids)
    return CandidateSet(query_id=expanded_query.query_id or expanded_query.original_text,
                        candidates=candidates)


def save_index(index: Bm25Index, path: str | Path) -> None:
    """Persist the index as versioned JSON; save -> load -> save is byte-identical."""
    payload = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "k1": index.k1,
        "b": index.b,
        "doc_count": index.doc_count,
        "avg_doc_length": index.avg_doc_length,
        "doc_lengths": index.doc_lengths,
        "postings": {term: [[doc_id, tf] for doc_id, tf in entries]
                     for term, entries in index.postings.items()},
    }
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")), encoding="utf-8"
    )


def load_index(path: str | Path) -> Bm25Index:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a valid index file ({exc.msg})") from exc
    if payload.get("format") != INDEX_FORMAT:
        raise ValidationError(f"{path}: unrecognized index format")
    if payload.get("version") != INDEX_VERSION:
        raise ValidationError(f"{path}: unsupported index version {payload.get('version')}")
    return Bm25Index(
        postings={term: [(doc_id, tf) for doc_id, tf in entries]
                  for term, entries in payload["postings"].items()},
        doc_lengths=payload["doc_lengths"],
        avg_doc_length=payload["avg_doc_length"],
        doc_count=payload["doc_count"],
        k1=payload["k1"],
        b=payload["b"],
    )


__all__ = [
    "Bm25Index",
    "CandidateSet",
    "bm25_rank",
    "bm25_score",
    "build_bm25",
    "dense_rank",
    "dense_scores",
    "hybrid_retrieve",
    "load_index",
    "rrf_fuse",
    "save_index",
    "weighted_fuse",
]
