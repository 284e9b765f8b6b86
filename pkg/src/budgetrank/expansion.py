"""Query expansion: propose related terms, filter by informativeness, embed.

Terms come from embedding nearest neighbors over a term-vector vocabulary
and/or a remote instruction-tuned LLM. Informativeness is the cosine of a
term vector to the query centroid; accepted terms must clear the threshold
and at most ``max_terms`` survive. The expanded query carries a combined
embedding biased toward the original query.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .corpus import Tokenizer, tokenize
from .errors import RemoteBackendError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_QUERY_WEIGHT = 0.7

DEFAULT_PROMPT_TEMPLATE = (
    "List up to {max_terms} single-word search terms closely related to the "
    "query below. Respond with a comma-separated list and nothing else.\n"
    "Query: {query}"
)

BACKENDS = ("embedding", "remote_llm", "both")


@dataclass(frozen=True)
class ExpansionConfig:
    """Expansion knobs: max accepted terms, threshold, backend, query bias."""

    m: int = 5
    phi: float = 0.3
    backend: str = "embedding"
    query_weight: float = DEFAULT_QUERY_WEIGHT

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError(f"expansion.m: {self.m} must be >= 1")
        if self.backend not in BACKENDS:
            raise ValidationError(
                f"expansion.backend: '{self.backend}' not one of {BACKENDS}"
            )
        if not 0.0 < self.query_weight <= 1.0:
            raise ValidationError(
                f"expansion.query_weight: {self.query_weight} outside (0, 1]"
            )


@dataclass(frozen=True)
class ScoredTerm:
    """A candidate expansion term with its informativeness score."""

    term: str
    informativeness: float


@dataclass(frozen=True)
class ExpandedQuery:
    """Original query plus accepted expansion terms and a combined embedding."""

    original_text: str
    original_terms: tuple[str, ...]
    expansion_terms: tuple[ScoredTerm, ...] = ()
    combined_embedding: np.ndarray | None = None
    query_id: str | None = None

    def __post_init__(self):
        originals = set(self.original_terms)
        for scored in self.expansion_terms:
            if scored.term in originals:
                raise ValidationError(
                    f"expansion term '{scored.term}' duplicates an original query term"
                )
        if self.combined_embedding is not None:
            emb = np.asarray(self.combined_embedding, dtype=np.float64)
            object.__setattr__(self, "combined_embedding", emb)

    def all_terms(self) -> list[str]:
        """Flat union q' = original terms + expansion terms."""
        return list(self.original_terms) + [t.term for t in self.expansion_terms]

    def expanded_text(self) -> str:
        extra = " ".join(t.term for t in self.expansion_terms)
        return f"{self.original_text} {extra}".strip()


class CompletionClient(Protocol):
    """Remote text-completion endpoint used for LLM-backed expansion."""

    def complete(self, prompt: str, max_terms: int) -> str | list[str]:
        ...


class HttpCompletionClient:
    """Thin HTTP client: POST {"prompt", "max_terms"} -> {"terms": [...]}."""

    def __init__(self, endpoint: str, token: str | None = None, timeout: float = 10.0, session=None):
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint = endpoint
        self.token = token
        self.timeout = timeout
        self._session = session

    def complete(self, prompt: str, max_terms: int) -> str | list[str]:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            response = self._session.post(
                self.endpoint,
                json={"prompt": prompt, "max_terms": max_terms},
                headers=headers,
                timeout=self.timeout,
            )
        except Exception as exc:
            raise RemoteBackendError(
                f"expansion backend unreachable: {exc}", endpoint=self.endpoint
            ) from exc
        if response.status_code != 200:
            raise RemoteBackendError(
                f"expansion backend returned status {response.status_code}",
                endpoint=self.endpoint,
                status=response.status_code,
            )
        try:
            body = response.json()
        except ValueError:
            return response.text
        if isinstance(body, dict) and isinstance(body.get("terms"), list):
            return [str(t) for t in body["terms"]]
        return response.text


def embed_query(
    query: str,
    vocab: Mapping[str, np.ndarray],
    tokenizer: Tokenizer = tokenize,
) -> np.ndarray:
    """Mean of the query's in-vocab term vectors, renormalized to unit length."""
    terms = tokenizer(query)
    vectors = [vocab[t] for t in terms if t in vocab]
    if not vectors:
        raise ValidationError(
            f"query '{query}' is not embeddable: no query term found in the vocabulary"
        )
    mean = np.mean(np.stack(vectors), axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise ValidationError(f"query '{query}' is not embeddable: term vectors cancel out")
    return mean / norm


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    value = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return max(-1.0, min(1.0, value))


def propose_terms_embedding(
    query: str,
    vocab: Mapping[str, np.ndarray],
    pool: int = 20,
    tokenizer: Tokenizer = tokenize,
) -> list[ScoredTerm]:
    """Rank vocabulary terms by cosine to the query centroid.

    Returns up to ``pool`` candidates; the query's own terms are excluded.
    """
    if pool < 1:
        raise ValidationError(f"expansion pool: {pool} must be >= 1")
    query_vec = embed_query(query, vocab, tokenizer)
    query_terms = set(tokenizer(query))
    scored = [
        ScoredTerm(term=term, informativeness=_cosine(vector, query_vec))
        for term, vector in vocab.items()
        if term not in query_terms
    ]
    scored.sort(key=lambda s: (-s.informativeness, s.term))
    return scored[:pool]


def propose_terms_llm(
    query: str,
    client: CompletionClient,
    vocab: Mapping[str, np.ndarray] | None = None,
    max_terms: int = 10,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    tokenizer: Tokenizer = tokenize,
) -> list[ScoredTerm]:
    """Ask the completion backend for related terms and score them.

    The completion may be a term array or free text (split on newlines and
    commas). Pieces that do not tokenize to a single new token are discarded.
    Terms are re-scored against the vocabulary when their vectors exist,
    otherwise they get informativeness 1.0.
    """
    prompt = prompt_template.format(query=query, max_terms=max_terms)
    completion = client.complete(prompt, max_terms)
    if isinstance(completion, str):
        pieces = [p for chunk in completion.splitlines() for p in chunk.split(",")]
    else:
        pieces = list(completion)

    query_terms = set(tokenizer(query))
    query_vec: np.ndarray | None = None
    if vocab:
        try:
            query_vec = embed_query(query, vocab, tokenizer)
        except ValidationError:
            query_vec = None

    seen: set[str] = set()
    terms: list[ScoredTerm] = []
    for piece in pieces:
        tokens = tokenizer(piece)
        if len(tokens) != 1:
            if piece.strip():
                logger.warning("expansion: discarding non-token completion piece %r", piece)
            continue
        term = tokens[0]
        if term in query_terms or term in seen:
            continue
        seen.add(term)
        if vocab and query_vec is not None and term in vocab:
            score = _cosine(vocab[term], query_vec)
        else:
            score = 1.0
        terms.append(ScoredTerm(term=term, informativeness=score))
    if not terms and pieces:
        logger.warning("expansion: completion for query %r produced no usable terms", query)
    return terms


def filter_terms(candidates: Sequence[ScoredTerm], config: ExpansionConfig) -> list[ScoredTerm]:
    """Dedup (keeping the higher score), keep scores >= phi, sort, cap at m."""
    best: dict[str, float] = {}
    for scored in candidates:
        current = best.get(scored.term)
        if current is None or scored.informativeness > current:
            best[scored.term] = scored.informativeness
    kept = [
        ScoredTerm(term=term, informativeness=score)
        for term, score in best.items()
        if score >= config.phi
    ]
    kept.sort(key=lambda s: (-s.informativeness, s.term))
    return kept[: config.m]


def build_expanded_query(
    query: str,
    terms: Sequence[ScoredTerm],
    vocab: Mapping[str, np.ndarray] | None,
    config: ExpansionConfig,
    tokenizer: Tokenizer = tokenize,
    query_id: str | None = None,
) -> ExpandedQuery:
    """Assemble the expanded query and its combined embedding.

    combined = normalize(w * v_query + (1 - w) * mean(term vectors)); the
    term mean falls back to the query vector when no accepted term has a
    vector, and the embedding is omitted entirely when the query itself is
    not embeddable.
    """
    original_terms = tuple(tokenizer(query))
    accepted = tuple(t for t in terms if t.term not in set(original_terms))

    combined: np.ndarray | None = None
    if vocab:
        try:
            query_vec = embed_query(query, vocab, tokenizer)
        except ValidationError:
            query_vec = None
        if query_vec is not None:
            term_vectors = [vocab[t.term] for t in accepted if t.term in vocab]
            if term_vectors and config.query_weight < 1.0:
                term_mean = np.mean(np.stack(term_vectors), axis=0)
                mixed = config.query_weight * query_vec + (1.0 - config.query_weight) * term_mean
                norm = float(np.linalg.norm(mixed))
                combined = mixed / norm if norm > 0.0 else query_vec
            else:
                combined = query_vec

    return ExpandedQuery(
        original_text=query,
        original_terms=original_terms,
        expansion_terms=accepted,
        combined_embedding=combined,
        query_id=query_id,
    )


def expand_query(
    query: str,
    config: ExpansionConfig,
    vocab: Mapping[str, np.ndarray] | None = None,
    client: CompletionClient | None = None,
    pool: int = 20,
    tokenizer: Tokenizer = tokenize,
    query_id: str | None = None,
) -> ExpandedQuery:
    """Full expansion: propose via the configured backend(s), filter, assemble."""
    candidates: list[ScoredTerm] = []
    if config.backend in ("embedding", "both"):
        if not vocab:
            raise ValidationError(
                "expansion.backend: embedding backend requires a term-vector vocabulary"
            )
        candidates.extend(propose_terms_embedding(query, vocab, pool, tokenizer))
    if config.backend in ("remote_llm", "both"):
        if client is None:
            raise ValidationError(
                "expansion.backend: remote_llm backend requires a completion client"
            )
        candidates.extend(propose_terms_llm(query, client, vocab, tokenizer=tokenizer))
    accepted = filter_terms(candidates, config)
    return build_expanded_query(query, accepted, vocab, config, tokenizer, query_id)


__all__ = [
    "CompletionClient",
    "DEFAULT_PROMPT_TEMPLATE",
    "ExpandedQuery",
    "ExpansionConfig",
    "HttpCompletionClient",
    "ScoredTerm",
    "build_expanded_query",
    "embed_query",
    "expand_query",
    "filter_terms",
    "propose_terms_embedding",
    "propose_terms_llm",
]
