"""Budget-aware hybrid retrieval and greedy context selection for RAG pipelines."""

from .corpus import Corpus, Document, ingest_jsonl, load_embeddings, load_term_vectors, tokenize
from .errors import BudgetRankError, PipelineStageError, RemoteBackendError, ValidationError
from .expansion import (
    ExpandedQuery,
    ExpansionConfig,
    ScoredTerm,
    build_expanded_query,
    expand_query,
    filter_terms,
    propose_terms_embedding,
    propose_terms_llm,
)
from .retrieval import (
    Bm25Index,
    CandidateSet,
    bm25_score,
    build_bm25,
    dense_scores,
    hybrid_retrieve,
    load_index,
    save_index,
)
from .scoring import (
    CeScorer,
    Coefficients,
    LexicalStubCeScorer,
    PrecomputedCeScorer,
    RemoteCeScorer,
    UtilityComponents,
    ce,
    len_norm,
    marginal_utility,
    nov,
    sim,
)
from .selection import (
    SelectionConfig,
    SelectionResult,
    SelectionStep,
    StopReason,
    explain_selection,
    greedy_select,
)
from .tuning import GridSpec, TuningInstance, grid_search, listwise_loss
from .evaluation import (
    Qrels,
    RunFile,
    bench_rerank,
    ndcg_at_k,
    recall_at_k,
    token_report,
)
from .config import PipelineConfig, load_config
from .pipeline import Pipeline, selection_to_json

__version__ = "0.1.0"

__all__ = [
    "Bm25Index",
    "BudgetRankError",
    "CandidateSet",
    "CeScorer",
    "Coefficients",
    "Corpus",
    "Document",
    "ExpandedQuery",
    "ExpansionConfig",
    "GridSpec",
    "LexicalStubCeScorer",
    "Pipeline",
    "PipelineConfig",
    "PipelineStageError",
    "PrecomputedCeScorer",
    "Qrels",
    "RemoteBackendError",
    "RemoteCeScorer",
    "RunFile",
    "ScoredTerm",
    "SelectionConfig",
    "SelectionResult",
    "SelectionStep",
    "StopReason",
    "TuningInstance",
    "UtilityComponents",
    "ValidationError",
    "bench_rerank",
    "bm25_score",
    "build_bm25",
    "build_expanded_query",
    "ce",
    "dense_scores",
    "expand_query",
    "explain_selection",
    "filter_terms",
    "greedy_select",
    "grid_search",
    "hybrid_retrieve",
    "ingest_jsonl",
    "len_norm",
    "listwise_loss",
    "load_config",
    "load_embeddings",
    "load_index",
    "load_term_vectors",
    "marginal_utility",
    "ndcg_at_k",
    "nov",
    "propose_terms_embedding",
    "propose_terms_llm",
    "recall_at_k",
    "save_index",
    "selection_to_json",
    "sim",
    "token_report",
    "tokenize",
]
