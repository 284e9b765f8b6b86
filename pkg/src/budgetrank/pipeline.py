"""End-to-end orchestration: expand -> retrieve -> select over loaded state.

A Pipeline owns the immutable corpus, BM25 index, term vocabulary, and CE
scorer described by a PipelineConfig. Stage failures are re-raised as
PipelineStageError naming the failing stage. The JSON serializers here are
the single source of truth for the wire format, so the CLI and the HTTP
service emit byte-identical payloads.
"""

from __future__ import annotations

import json
import logging
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

from . import expansion as expansion_mod
from . import retrieval as retrieval_mod
from . import selection as selection_mod
from .config import PipelineConfig
from .corpus import Corpus, ingest_jsonl, load_embeddings, load_term_vectors
from .errors import PipelineStageError, ValidationError
from .expansion import ExpandedQuery, ExpansionConfig, HttpCompletionClient
from .retrieval import Bm25Index, CandidateSet
from .scoring import (
    CeScorer,
    Coefficients,
    LexicalStubCeScorer,
    PrecomputedCeScorer,
    RemoteCeScorer,
)
from .selection import SelectionConfig, SelectionResult


def selection_to_json(result: SelectionResult) -> str:
    """Canonical single-line JSON for a selection result."""
    return json.dumps(result.to_json_dict(), separators=(",", ":"))


def expanded_query_to_json(expanded: ExpandedQuery) -> str:
    payload = {
        "query_id": expanded.query_id,
        "original_text": expanded.original_text,
        "original_terms": list(expanded.original_terms),
        "expansion_terms": [
            {"term": t.term, "informativeness": t.informativeness}
            for t in expanded.expansion_terms
        ],
        "combined_embedding": (
            None
            if expanded.combined_embedding is None
            else [float(x) for x in expanded.combined_embedding]
        ),
    }
    return json.dumps(payload, separators=(",", ":"))


def candidates_to_json(candidates: CandidateSet) -> str:
    payload = {
        "query_id": candidates.query_id,
        "candidates": [
            {"doc_id": doc.id, "score": score} for doc, score in candidates.candidates
        ],
    }
    return json.dumps(payload, separators=(",", ":"))


def build_ce_scorer(config: PipelineConfig) -> CeScorer:
    ce = config.ce
    if ce.backend == "lexical_stub":
        return LexicalStubCeScorer()
    if ce.backend == "precomputed":
        if config.paths.ce_scores is None:
            raise ValidationError("ce.backend: precomputed backend requires paths.ce_scores")
        return PrecomputedCeScorer.from_tsv(config.paths.ce_scores)
    if ce.endpoint is None:
        raise ValidationError("ce.endpoint: remote backend requires an endpoint")
    return RemoteCeScorer(endpoint=ce.endpoint, token=ce.token, timeout=ce.timeout)


class Pipeline:
    """Immutable retrieval-and-selection engine bound to one configuration."""

    def __init__(
        self,
        config: PipelineConfig,
        corpus: Corpus,
        index: Bm25Index,
        vocab: Mapping[str, np.ndarray] | None = None,
        ce_scorer: CeScorer | None = None,
        completion_client=None,
    ):
        self.config = config
        self.corpus = corpus
        self.index = index
        self.vocab = vocab
        self.ce_scorer = ce_scorer if ce_scorer is not None else build_ce_scorer(config)
        self.completion_client = completion_client

    @classmethod
    def from_config(cls, config: PipelineConfig, completion_client=None) -> "Pipeline":
        if config.paths.corpus is None:
            raise ValidationError("paths.corpus: required to build a pipeline")
        try:
            corpus = ingest_jsonl(config.paths.corpus)
            if config.paths.embeddings is not None:
                corpus = load_embeddings(config.paths.embeddings, corpus)
        except Exception as exc:
            raise PipelineStageError("ingest", exc) from exc
        try:
            if config.paths.index is not None and config.paths.index.exists():
                index = retrieval_mod.load_index(config.paths.index)
            else:
                index = retrieval_mod.build_bm25(corpus, k1=config.bm25.k1, b=config.bm25.b)
        except PipelineStageError:
            raise
        except Exception as exc:
            raise PipelineStageError("index", exc) from exc
        vocab = None
        if config.paths.vocab is not None:
            try:
                vocab = load_term_vectors(config.paths.vocab)
            except Exception as exc:
                raise PipelineStageError("vocab", exc) from exc
        if completion_client is None and config.llm.endpoint:
            completion_client = HttpCompletionClient(
                endpoint=config.llm.endpoint,
                token=config.llm.token,
                timeout=config.llm.timeout,
            )
        return cls(
            config=config,
            corpus=corpus,
            index=index,
            vocab=vocab,
            completion_client=completion_client,
        )

    def expand(self, query_text: str, query_id: str | None = None) -> ExpandedQuery:
        cfg = self.config.expansion
        use_embedding = cfg.backend in ("embedding", "both") and bool(self.vocab)
        use_llm = cfg.backend in ("remote_llm", "both") and self.completion_client is not None
        try:
            if not use_embedding and not use_llm:
                # Backend inputs (vocab file, LLM endpoint) not configured:
                # degrade to the bare query so lexical-only setups still work.
                logger.warning(
                    "expansion backend '%s' has no usable inputs; using the bare query",
                    cfg.backend,
                )
                return expansion_mod.build_expanded_query(
                    query_text, [], self.vocab, cfg, query_id=query_id
                )
            effective = ExpansionConfig(
                m=cfg.m,
                phi=cfg.phi,
                backend="both" if use_embedding and use_llm
                else ("embedding" if use_embedding else "remote_llm"),
                query_weight=cfg.query_weight,
            )
            return expansion_mod.expand_query(
                query_text,
                effective,
                vocab=self.vocab,
                client=self.completion_client,
                query_id=query_id,
            )
        except PipelineStageError:
            raise
        except Exception as exc:
            raise PipelineStageError("expand", exc) from exc

    def retrieve(self, expanded: ExpandedQuery, n: int | None = None) -> CandidateSet:
        try:
            return retrieval_mod.hybrid_retrieve(
                expanded,
                self.index,
                self.corpus,
                n if n is not None else self.config.retrieval_n,
                fusion_mode=self.config.fusion.mode,
                rrf_k=self.config.fusion.rrf_k,
                dense_weight=self.config.fusion.dense_weight,
            )
        except Exception as exc:
            raise PipelineStageError("retrieve", exc) from exc

    def select(
        self,
        expanded: ExpandedQuery,
        candidates: CandidateSet,
        budget: int | None = None,
        tau: float | None = None,
    ) -> SelectionResult:
        base = self.config.selection
        try:
            cfg = base
            if budget is not None or tau is not None:
                cfg = SelectionConfig(
                    budget_tokens=budget if budget is not None else base.budget_tokens,
                    tau=tau if tau is not None else base.tau,
                    oversize_policy=base.oversize_policy,
                    length_normalizer=base.length_normalizer,
                )
            return selection_mod.greedy_select(
                expanded, candidates, self.config.coefficients, cfg, self.ce_scorer
            )
        except Exception as exc:
            raise PipelineStageError("rerank", exc) from exc

    def run(
        self,
        query_text: str,
        query_id: str | None = None,
        budget: int | None = None,
        tau: float | None = None,
        n: int | None = None,
    ) -> SelectionResult:
        expanded = self.expand(query_text, query_id=query_id)
        candidates = self.retrieve(expanded, n=n)
        return self.select(expanded, candidates, budget=budget, tau=tau)

    def inline_candidates(
        self, query_id: str, entries: Sequence[dict]
    ) -> CandidateSet:
        """Build a candidate set from request-supplied {id, text, embedding?} dicts.

        Embeddings omitted from an entry are looked up in the loaded corpus;
        an entry that is in neither place fails validation.
        """
        from .corpus import Document, normalize_embedding, tokenize

        docs: list[Document] = []
        for position, entry in enumerate(entries):
            doc_id = entry.get("id")
            text = entry.get("text")
            if not isinstance(doc_id, str) or not doc_id:
                raise ValidationError(f"candidates[{position}].id: must be a non-empty string")
            if not isinstance(text, str):
                raise ValidationError(f"candidates[{position}].text: must be a string")
            embedding = None
            if entry.get("embedding") is not None:
                embedding = normalize_embedding(
                    entry["embedding"], context=f"candidates[{position}].embedding"
                )
            elif doc_id in self.corpus and self.corpus.get(doc_id).embedding is not None:
                embedding = self.corpus.get(doc_id).embedding
            else:
                raise ValidationError(
                    f"candidates[{position}].embedding: missing and doc "
                    f"'{doc_id}' has no stored embedding"
                )
            docs.append(
                Document(
                    id=doc_id,
                    text=text,
                    token_count=len(tokenize(text)),
                    embedding=embedding,
                )
            )
        ordered = tuple(sorted(((doc, 0.0) for doc in docs), key=lambda pair: pair[0].id))
        return CandidateSet(query_id=query_id, candidates=ordered)


__all__ = [
    "Pipeline",
    "build_ce_scorer",
    "candidates_to_json",
    "expanded_query_to_json",
    "selection_to_json",
]
