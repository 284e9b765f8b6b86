"""Greedy marginal-utility selection under a hard token budget.

Each step picks the remaining candidate with the highest marginal gain
(ties: ascending doc id). Selection stops when the best gain falls below the
threshold, when the budget is exactly filled, when the best candidate no
longer fits (policy ``break``; policy ``skip`` drops it and keeps going), or
when candidates run out.

Per-candidate sim/len/ce values are computed once and cached; only the
novelty term is refreshed as the selected set grows, by tracking the running
maximum similarity to accepted documents. Gains are recombined through
``scoring.combine`` so the cached fast path is bit-identical to recomputing
``scoring.marginal_utility`` from scratch each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import scoring
from .errors import ValidationError
from .expansion import ExpandedQuery
from .retrieval import CandidateSet
from .scoring import CeScorer, Coefficients, UtilityComponents


class StopReason(str, Enum):
    THRESHOLD = "threshold"
    BUDGET_EXACT = "budget_exact"
    OVERSIZE_BREAK = "oversize_break"
    EXHAUSTED = "exhausted"


OVERSIZE_POLICIES = ("break", "skip")


@dataclass(frozen=True)
class SelectionConfig:
    """Budget cap, stop threshold, and oversize handling.

    ``length_normalizer`` sets the scale of the soft length penalty and
    defaults to the budget cap; pin it when sweeping budgets so the greedy
    order depends only on the candidates, not on the cap.
    """

    budget_tokens: int = 1000
    tau: float = 0.0
    oversize_policy: str = "break"
    length_normalizer: int | None = None

    def __post_init__(self):
        if self.budget_tokens < 1:
            raise ValidationError(
                f"selection.budget_tokens: {self.budget_tokens} must be >= 1"
            )
        if self.oversize_policy not in OVERSIZE_POLICIES:
            raise ValidationError(
                f"selection.oversize_policy: '{self.oversize_policy}' "
                f"not one of {OVERSIZE_POLICIES}"
            )
        if self.length_normalizer is not None and self.length_normalizer < 1:
            raise ValidationError(
                f"selection.length_normalizer: {self.length_normalizer} must be >= 1"
            )

    @property
    def effective_normalizer(self) -> int:
        return self.length_normalizer if self.length_normalizer is not None else self.budget_tokens


@dataclass(frozen=True)
class SelectionStep:
    doc_id: str
    gain: float
    tokens_cum: int


@dataclass(frozen=True)
class SelectionResult:
    """Ordered accepted documents with per-step gains and the stop reason."""

    query_id: str
    selected: tuple[SelectionStep, ...]
    total_tokens: int
    stop_reason: StopReason
    components: tuple[UtilityComponents, ...] = field(default=(), compare=False)

    def doc_ids(self) -> list[str]:
        return [step.doc_id for step in self.selected]

    def to_json_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "selected": [
                {"doc_id": s.doc_id, "gain": s.gain, "tokens_cum": s.tokens_cum}
                for s in self.selected
            ],
            "total_tokens": self.total_tokens,
            "stop_reason": self.stop_reason.value,
        }


def greedy_select(
    expanded_query: ExpandedQuery,
    candidates: CandidateSet,
    coeffs: Coefficients,
    config: SelectionConfig,
    scorer: CeScorer,
) -> SelectionResult:
    """Select candidates by descending marginal utility under the token budget."""
    docs = candidates.documents()
    for doc in docs:
        if doc.embedding is None:
            raise ValidationError(f"selection: candidate '{doc.id}' has no embedding")

    normalizer = config.effective_normalizer
    sims = [scoring.sim(expanded_query, doc) for doc in docs]
    lens = [scoring.len_norm(doc, normalizer) for doc in docs]
    ces = [scoring.ce(expanded_query, doc, scorer) for doc in docs]
    max_sim: list[float | None] = [None] * len(docs)

    budget = config.budget_tokens
    remaining = set(range(len(docs)))
    steps: list[SelectionStep] = []
    step_components: list[UtilityComponents] = []
    total = 0

    while True:
        if total >= budget:
            reason = StopReason.BUDGET_EXACT
            break
        if not remaining:
            reason = StopReason.EXHAUSTED
            break

        best_idx = -1
        best_gain = float("-inf")
        best_parts: UtilityComponents | None = None
        for i in remaining:
            prior = max_sim[i]
            parts = UtilityComponents(
                sim=sims[i],
                nov=1.0 if prior is None else 1.0 - prior,
                len_norm=lens[i],
                ce=ces[i],
            )
            gain = scoring.combine(coeffs, parts)
            if gain > best_gain or (
                gain == best_gain and docs[i].id < docs[best_idx].id
            ):
                best_idx = i
                best_gain = gain
                best_parts = parts

        if best_gain < config.tau:
            reason = StopReason.THRESHOLD
            break

        chosen = docs[best_idx]
        if total + chosen.token_count <= budget:
            remaining.discard(best_idx)
            total += chosen.token_count
            steps.append(SelectionStep(doc_id=chosen.id, gain=best_gain, tokens_cum=total))
            step_components.append(best_parts)
            for i in remaining:
                value = scoring.cosine(docs[i].embedding, chosen.embedding)
                prior = max_sim[i]
                if prior is None or value > prior:
                    max_sim[i] = value
        elif config.oversize_policy == "skip":
            remaining.discard(best_idx)
        else:
            reason = StopReason.OVERSIZE_BREAK
            break

    return SelectionResult(
        query_id=candidates.query_id,
        selected=tuple(steps),
        total_tokens=total,
        stop_reason=reason,
        components=tuple(step_components),
    )


def explain_selection(result: SelectionResult, components) -> str:
    """Render a per-step component table plus totals and the stop reason."""
    components = tuple(components)
    if len(components) != len(result.selected):
        raise ValidationError(
            f"explain: {len(components)} component records for "
            f"{len(result.selected)} selected steps"
        )
    lines = [f"query: {result.query_id}"]
    if result.selected:
        header = (
            f"{'step':>4}  {'doc_id':<16} {'sim':>8} {'nov':>8} "
            f"{'len_norm':>8} {'ce':>8} {'gain':>9} {'tokens_cum':>10}"
        )
        lines.append(header)
        lines.append("-" * len(header))
        for rank, (step, parts) in enumerate(zip(result.selected, components), start=1):
            lines.append(
                f"{rank:>4}  {step.doc_id:<16} {parts.sim:>8.4f} {parts.nov:>8.4f} "
                f"{parts.len_norm:>8.4f} {parts.ce:>8.4f} {step.gain:>9.4f} "
                f"{step.tokens_cum:>10d}"
            )
    lines.append(f"total_tokens: {result.total_tokens}")
    lines.append(f"stop_reason: {result.stop_reason.value}")
    return "\n".join(lines)


__all__ = [
    "SelectionConfig",
    "SelectionResult",
    "SelectionStep",
    "StopReason",
    "explain_selection",
    "greedy_select",
]
