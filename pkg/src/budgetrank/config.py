"""Pipeline configuration: YAML file, validated, with env overrides for secrets.

Every validation failure names the offending key. Endpoint URLs and auth
tokens may come from the environment (BUDGETRANK_LLM_ENDPOINT,
BUDGETRANK_LLM_TOKEN, BUDGETRANK_CE_ENDPOINT, BUDGETRANK_CE_TOKEN) so they
never need to live in the config file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ValidationError
from .expansion import ExpansionConfig
from .retrieval import DEFAULT_B, DEFAULT_K1, DEFAULT_RRF_K
from .scoring import Coefficients
from .selection import SelectionConfig

ENV_PREFIX = "BUDGETRANK"

FUSION_MODES = ("rrf", "weighted")
CE_BACKENDS = ("precomputed", "remote", "lexical_stub")


@dataclass(frozen=True)
class PathsConfig:
    corpus: Path | None = None
    embeddings: Path | None = None
    vocab: Path | None = None
    ce_scores: Path | None = None
    qrels: Path | None = None
    index: Path | None = None


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "rrf"
    rrf_k: float = DEFAULT_RRF_K
    dense_weight: float = 0.5

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ValidationError(f"fusion.mode: '{self.mode}' not one of {FUSION_MODES}")
        if self.rrf_k <= 0:
            raise ValidationError(f"fusion.rrf_k: {self.rrf_k} must be > 0")
        if not 0.0 <= self.dense_weight <= 1.0:
            raise ValidationError(f"fusion.dense_weight: {self.dense_weight} outside [0, 1]")


@dataclass(frozen=True)
class Bm25Config:
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def __post_init__(self):
        if self.k1 < 0:
            raise ValidationError(f"bm25.k1: {self.k1} must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValidationError(f"bm25.b: {self.b} outside [0, 1]")


@dataclass(frozen=True)
class CeConfig:
    backend: str = "lexical_stub"
    endpoint: str | None = None
    token: str | None = None
    timeout: float = 10.0

    def __post_init__(self):
        if self.backend not in CE_BACKENDS:
            raise ValidationError(f"ce.backend: '{self.backend}' not one of {CE_BACKENDS}")


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str | None = None
    token: str | None = None
    timeout: float = 10.0
    max_terms: int = 10


@dataclass(frozen=True)
class ServiceConfig:
    max_inline_candidates: int = 256

    def __post_init__(self):
        if self.max_inline_candidates < 1:
            raise ValidationError(
                f"service.max_inline_candidates: {self.max_inline_candidates} must be >= 1"
            )


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the end-to-end pipeline needs, in one validated bundle."""

    paths: PathsConfig = field(default_factory=PathsConfig)
    expansion: ExpansionConfig = field(default_factory=ExpansionConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    coefficients: Coefficients = field(default_factory=Coefficients)
    retrieval_n: int = 50
    fusion: FusionConfig = field(default_factory=FusionConfig)
    bm25: Bm25Config = field(default_factory=Bm25Config)
    ce: CeConfig = field(default_factory=CeConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def __post_init__(self):
        if self.retrieval_n < 1:
            raise ValidationError(f"retrieval.n: {self.retrieval_n} must be >= 1")


def _require(mapping: dict, section: str) -> dict:
    value = mapping.get(section) or {}
    if not isinstance(value, dict):
        raise ValidationError(f"{section}: must be a mapping")
    return value


def _typed(section: str, key: str, value, kind):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{section}.{key}: '{value}' is not a valid {kind.__name__}") from None


def _build_paths(raw: dict, base_dir: Path) -> PathsConfig:
    known = ("corpus", "embeddings", "vocab", "ce_scores", "qrels", "index")
    resolved: dict[str, Path | None] = {}
    for key in known:
        value = raw.get(key)
        if value is None:
            resolved[key] = None
            continue
        path = Path(value)
        if not path.is_absolute():
            path = base_dir / path
        resolved[key] = path
        # The index is an output for `index` and an input elsewhere; only
        # strictly-input files must exist at load.
        if key != "index" and not path.exists():
            raise ValidationError(f"paths.{key}: file not found: {path}")
    return PathsConfig(**resolved)


def load_config(path: str | Path) -> PipelineConfig:
    """Load and validate a YAML pipeline config; env vars override secrets."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, base_dir=path.parent)


def config_from_dict(raw: dict, base_dir: Path | None = None) -> PipelineConfig:
    base_dir = base_dir or Path.cwd()
    paths = _build_paths(_require(raw, "paths"), base_dir)

    exp = _require(raw, "expansion")
    expansion = ExpansionConfig(
        m=_typed("expansion", "m", exp.get("m", 5), int),
        phi=_typed("expansion", "phi", exp.get("phi", 0.3), float),
        backend=str(exp.get("backend", "embedding")),
        query_weight=_typed("expansion", "query_weight", exp.get("query_weight", 0.7), float),
    )

    sel = _require(raw, "selection")
    normalizer = sel.get("length_normalizer")
    selection = SelectionConfig(
        budget_tokens=_typed("selection", "budget_tokens", sel.get("budget_tokens", 1000), int),
        tau=_typed("selection", "tau", sel.get("tau", 0.0), float),
        oversize_policy=str(sel.get("oversize_policy", "break")),
        length_normalizer=None if normalizer is None
        else _typed("selection", "length_normalizer", normalizer, int),
    )

    coeff = _require(raw, "coefficients")
    coefficients = Coefficients(
        alpha=_typed("coefficients", "alpha", coeff.get("alpha", 1.0), float),
        beta=_typed("coefficients", "beta", coeff.get("beta", 1.0), float),
        gamma=_typed("coefficients", "gamma", coeff.get("gamma", 0.5), float),
        delta=_typed("coefficients", "delta", coeff.get("delta", 0.0), float),
    )

    ret = _require(raw, "retrieval")
    retrieval_n = _typed("retrieval", "n", ret.get("n", 50), int)

    fus = _require(raw, "fusion")
    fusion = FusionConfig(
        mode=str(fus.get("mode", "rrf")),
        rrf_k=_typed("fusion", "rrf_k", fus.get("rrf_k", DEFAULT_RRF_K), float),
        dense_weight=_typed("fusion", "dense_weight", fus.get("dense_weight", 0.5), float),
    )

    bm = _require(raw, "bm25")
    bm25 = Bm25Config(
        k1=_typed("bm25", "k1", bm.get("k1", DEFAULT_K1), float),
        b=_typed("bm25", "b", bm.get("b", DEFAULT_B), float),
    )

    ce_raw = _require(raw, "ce")
    ce = CeConfig(
        backend=str(ce_raw.get("backend", "lexical_stub")),
        endpoint=os.environ.get(f"{ENV_PREFIX}_CE_ENDPOINT", ce_raw.get("endpoint")),
        token=os.environ.get(f"{ENV_PREFIX}_CE_TOKEN", ce_raw.get("token")),
        timeout=_typed("ce", "timeout", ce_raw.get("timeout", 10.0), float),
    )

    llm_raw = _require(raw, "llm")
    llm = LlmConfig(
        endpoint=os.environ.get(f"{ENV_PREFIX}_LLM_ENDPOINT", llm_raw.get("endpoint")),
        token=os.environ.get(f"{ENV_PREFIX}_LLM_TOKEN", llm_raw.get("token")),
        timeout=_typed("llm", "timeout", llm_raw.get("timeout", 10.0), float),
        max_terms=_typed("llm", "max_terms", llm_raw.get("max_terms", 10), int),
    )

    svc = _require(raw, "service")
    service = ServiceConfig(
        max_inline_candidates=_typed(
            "service", "max_inline_candidates", svc.get("max_inline_candidates", 256), int
        ),
    )

    return PipelineConfig(
        paths=paths,
        expansion=expansion,
        selection=selection,
        coefficients=coefficients,
        retrieval_n=retrieval_n,
        fusion=fusion,
        bm25=bm25,
        ce=ce,
        llm=llm,
        service=service,
    )


__all__ = [
    "Bm25Config",
    "CeConfig",
    "FusionConfig",
    "LlmConfig",
    "PathsConfig",
    "PipelineConfig",
    "ServiceConfig",
    "config_from_dict",
    "load_config",
]
