"""Document model, tokenization, and corpus/embedding ingestion.

A corpus is an immutable, ordered collection of documents loaded from JSONL.
Token counts are computed at ingestion with a pluggable tokenizer so budgets
stay reproducible; embeddings are consumed from files (never computed here)
and stored unit-normalized.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import ValidationError

Tokenizer = Callable[[str], list[str]]

UNIT_NORM_TOL = 1e-6

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Split text into lowercase alphanumeric tokens.

    Deterministic: lowercases, then takes maximal alphanumeric runs
    (punctuation, whitespace, and underscores are boundaries).
    """
    return _TOKEN_RE.findall(text.lower())


def normalize_embedding(vector: Iterable[float], *, context: str = "embedding") -> np.ndarray:
    """Return the vector scaled to unit Euclidean norm; reject zero vectors."""
    arr = np.asarray(list(vector), dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{context}: must be a non-empty flat vector")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValidationError(f"{context}: zero-norm embedding cannot be normalized")
    return arr / norm


@dataclass(frozen=True)
class Document:
    """A corpus passage with an id, text, token count, and optional embedding."""

    id: str
    text: str
    token_count: int
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("document id must be non-empty")
        if self.token_count < 0:
            raise ValidationError(f"document '{self.id}': token_count must be >= 0")
        if self.embedding is not None:
            emb = np.asarray(self.embedding, dtype=np.float64)
            norm = float(np.linalg.norm(emb))
            if abs(norm - 1.0) > UNIT_NORM_TOL:
                raise ValidationError(
                    f"document '{self.id}': embedding norm {norm:.8f} is not unit length"
                )
            object.__setattr__(self, "embedding", emb)

    def __eq__(self, other):
        if not isinstance(other, Document):
            return NotImplemented
        if (self.id, self.text, self.token_count) != (other.id, other.text, other.token_count):
            return False
        if (self.embedding is None) != (other.embedding is None):
            return False
        return self.embedding is None or bool(np.array_equal(self.embedding, other.embedding))

    def __hash__(self):
        return hash(self.id)


@dataclass(frozen=True)
class Corpus:
    """Ordered, id-keyed collection of documents sharing one embedding dimension."""

    documents: dict[str, Document] = field(default_factory=dict)
    embedding_dim: int | None = None

    def __post_init__(self):
        dim = self.embedding_dim
        for doc in self.documents.values():
            if doc.embedding is None:
                continue
            if dim is None:
                dim = int(doc.embedding.shape[0])
            elif doc.embedding.shape[0] != dim:
                raise ValidationError(
                    f"document '{doc.id}': embedding dimension {doc.embedding.shape[0]} "
                    f"differs from corpus dimension {dim}"
                )
        object.__setattr__(self, "embedding_dim", dim)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents.values())

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.documents

    def get(self, doc_id: str) -> Document:
        try:
            return self.documents[doc_id]
        except KeyError:
            raise ValidationError(f"unknown document id '{doc_id}'") from None

    def embedded_documents(self) -> list[Document]:
        return [d for d in self.documents.values() if d.embedding is not None]


def _parse_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {line_no}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ValidationError(f"{path}: line {line_no}: expected a JSON object")
            yield line_no, obj


def ingest_jsonl(path: str | Path, tokenizer: Tokenizer = tokenize) -> Corpus:
    """Load a corpus from JSONL lines of {"id", "text", "embedding"?}.

    Token counts are computed with the given tokenizer; embeddings are
    normalized to unit length on load. Errors name the offending line or id.
    """
    path = Path(path)
    documents: dict[str, Document] = {}
    dim: int | None = None
    for line_no, obj in _parse_jsonl(path):
        doc_id = obj.get("id")
        text = obj.get("text")
        if not isinstance(doc_id, str) or not doc_id:
            raise ValidationError(f"{path}: line {line_no}: missing or invalid string field 'id'")
        if not isinstance(text, str):
            raise ValidationError(f"{path}: line {line_no}: missing or invalid string field 'text'")
        if doc_id in documents:
            raise ValidationError(f"{path}: line {line_no}: duplicate document id '{doc_id}'")
        embedding = None
        if "embedding" in obj and obj["embedding"] is not None:
            raw = obj["embedding"]
            if not isinstance(raw, list):
                raise ValidationError(f"{path}: line {line_no}: 'embedding' must be an array")
            embedding = normalize_embedding(raw, context=f"{path}: line {line_no}")
            if dim is None:
                dim = embedding.shape[0]
            elif embedding.shape[0] != dim:
                raise ValidationError(
                    f"{path}: line {line_no}: embedding dimension {embedding.shape[0]} "
                    f"differs from earlier dimension {dim}"
                )
        documents[doc_id] = Document(
            id=doc_id,
            text=text,
            token_count=len(tokenizer(text)),
            embedding=embedding,
        )
    return Corpus(documents=documents, embedding_dim=dim)


def load_embeddings(path: str | Path, corpus: Corpus) -> Corpus:
    """Attach unit-normalized embeddings from a JSONL sidecar of {"id", "embedding"}.

    Documents absent from the sidecar keep whatever embedding they already
    had (usually none). Unknown ids and inconsistent dimensions are errors.
    """
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    dim = corpus.embedding_dim
    for line_no, obj in _parse_jsonl(path):
        doc_id = obj.get("id")
        raw = obj.get("embedding")
        if not isinstance(doc_id, str) or not doc_id:
            raise ValidationError(f"{path}: line {line_no}: missing or invalid string field 'id'")
        if doc_id not in corpus:
            raise ValidationError(f"{path}: line {line_no}: unknown document id '{doc_id}'")
        if not isinstance(raw, list):
            raise ValidationError(f"{path}: line {line_no}: 'embedding' must be an array")
        embedding = normalize_embedding(raw, context=f"{path}: line {line_no}")
        if dim is None:
            dim = embedding.shape[0]
        elif embedding.shape[0] != dim:
            raise ValidationError(
                f"{path}: line {line_no}: embedding dimension {embedding.shape[0]} "
                f"differs from expected dimension {dim}"
            )
        vectors[doc_id] = embedding

    documents = {
        doc.id: (
            Document(id=doc.id, text=doc.text, token_count=doc.token_count, embedding=vectors[doc.id])
            if doc.id in vectors
            else doc
        )
        for doc in corpus
    }
    return Corpus(documents=documents, embedding_dim=dim)


def load_term_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Load a term-embedding vocabulary from JSONL lines of {"term", "embedding"}."""
    path = Path(path)
    vocab: dict[str, np.ndarray] = {}
    dim: int | None = None
    for line_no, obj in _parse_jsonl(path):
        term = obj.get("term")
        raw = obj.get("embedding")
        if not isinstance(term, str) or not term:
            raise ValidationError(f"{path}: line {line_no}: missing or invalid string field 'term'")
        if not isinstance(raw, list):
            raise ValidationError(f"{path}: line {line_no}: 'embedding' must be an array")
        vector = normalize_embedding(raw, context=f"{path}: line {line_no}")
        if dim is None:
            dim = vector.shape[0]
        elif vector.shape[0] != dim:
            raise ValidationError(
                f"{path}: line {line_no}: embedding dimension {vector.shape[0]} "
                f"differs from earlier dimension {dim}"
            )
        if term in vocab:
            raise ValidationError(f"{path}: line {line_no}: duplicate term '{term}'")
        vocab[term] = vector
    return vocab


__all__ = [
    "Corpus",
    "Document",
    "Tokenizer",
    "ingest_jsonl",
    "load_embeddings",
    "load_term_vectors",
    "normalize_embedding",
    "tokenize",
]
