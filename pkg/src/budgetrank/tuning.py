"""Coefficient learning by exhaustive grid search.

The loss for one query is the listwise cross-entropy between a softmax over
first-step utilities (the gains every candidate would get against an empty
selection) and a softmax over gold cross-encoder scores. Grid search returns
the grid point minimizing the mean loss, alpha-major ties going to the
earliest point.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import scoring
from .errors import ValidationError
from .expansion import ExpandedQuery
from .retrieval import CandidateSet
from .scoring import CeScorer, Coefficients

DEFAULT_GRID_VALUES = (0.0, 0.25, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class TuningInstance:
    """One query's candidates plus the gold cross-encoder scores to match."""

    expanded_query: ExpandedQuery
    candidates: CandidateSet
    gold_ce: dict[str, float]

    def __post_init__(self):
        missing = [doc_id for doc_id in self.candidates.doc_ids() if doc_id not in self.gold_ce]
        if missing:
            raise ValidationError(
                f"tuning instance '{self.candidates.query_id}': gold scores missing "
                f"for {missing}"
            )


@dataclass(frozen=True)
class GridSpec:
    """Per-coefficient candidate values, crossed exhaustively (alpha-major)."""

    alphas: tuple[float, ...] = DEFAULT_GRID_VALUES
    betas: tuple[float, ...] = DEFAULT_GRID_VALUES
    gammas: tuple[float, ...] = DEFAULT_GRID_VALUES
    deltas: tuple[float, ...] = DEFAULT_GRID_VALUES

    def __post_init__(self):
        for name in ("alphas", "betas", "gammas", "deltas"):
            values = getattr(self, name)
            if not values:
                raise ValidationError(f"grid.{name}: must be non-empty")
            if any(v < 0.0 for v in values):
                raise ValidationError(f"grid.{name}: values must be >= 0")

    def points(self):
        for alpha, beta, gamma, delta in itertools.product(
            self.alphas, self.betas, self.gammas, self.deltas
        ):
            yield Coefficients(alpha=alpha, beta=beta, gamma=gamma, delta=delta)

    @property
    def size(self) -> int:
        return len(self.alphas) * len(self.betas) * len(self.gammas) * len(self.deltas)


def _log_softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max()
    return shifted - np.log(np.exp(shifted).sum())


def _softmax(values: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(values))


def first_step_components(instance: TuningInstance, budget: int, scorer: CeScorer):
    """Per-candidate utility components against an empty selection."""
    return [
        scoring.utility_components(doc, [], instance.expanded_query, budget, scorer)
        for doc in instance.candidates.documents()
    ]


def listwise_loss(
    instance: TuningInstance,
    coeffs: Coefficients,
    budget: int,
    scorer: CeScorer,
) -> float:
    """Cross-entropy H(gold softmax, utility softmax) over the candidate list."""
    if len(instance.candidates) < 2:
        raise ValidationError(
            f"tuning instance '{instance.candidates.query_id}': needs >= 2 candidates"
        )
    utilities = np.asarray(
        [
            scoring.marginal_utility(doc, [], instance.expanded_query, coeffs, budget, scorer)
            for doc in instance.candidates.documents()
        ],
        dtype=np.float64,
    )
    gold = np.asarray(
        [instance.gold_ce[doc_id] for doc_id in instance.candidates.doc_ids()],
        dtype=np.float64,
    )
    return float(-(_softmax(gold) * _log_softmax(utilities)).sum())


def gold_entropy(instance: TuningInstance) -> float:
    """Entropy of the gold softmax distribution (the loss lower bound)."""
    gold = np.asarray(
        [instance.gold_ce[doc_id] for doc_id in instance.candidates.doc_ids()],
        dtype=np.float64,
    )
    g = _softmax(gold)
    return float(-(g * np.log(g)).sum())


def grid_search(
    instances: Sequence[TuningInstance],
    grid: GridSpec,
    budget: int,
    scorer: CeScorer,
) -> tuple[Coefficients, float]:
    """Exhaustively evaluate the grid; return the argmin of mean listwise loss.

    Per-instance components are computed once; each grid point then reduces
    to a weighted combination, which keeps the 625-point default grid cheap.
    """
    if not instances:
        raise ValidationError("grid search requires at least one tuning instance")
    component_rows = []
    gold_dists: list[np.ndarray] = []
    for instance in instances:
        if len(instance.candidates) < 2:
            raise ValidationError(
                f"tuning instance '{instance.candidates.query_id}': needs >= 2 candidates"
            )
        component_rows.append(first_step_components(instance, budget, scorer))
        gold = np.asarray(
            [instance.gold_ce[doc_id] for doc_id in instance.candidates.doc_ids()],
            dtype=np.float64,
        )
        gold_dists.append(_softmax(gold))

    # Combining cached components per grid point repeats listwise_loss's exact
    # arithmetic, so ties resolve the same way as a naive re-evaluation.
    best_coeffs: Coefficients | None = None
    best_loss = float("inf")
    for coeffs in grid.points():
        total = 0.0
        for components, gold_dist in zip(component_rows, gold_dists):
            utilities = np.asarray(
                [scoring.combine(coeffs, parts) for parts in components],
                dtype=np.float64,
            )
            total += float(-(gold_dist * _log_softmax(utilities)).sum())
        mean_loss = total / len(instances)
        if mean_loss < best_loss:
            best_loss = mean_loss
            best_coeffs = coeffs
    return best_coeffs, best_loss


def load_tuning_instances(
    path: str | Path,
    corpus,
    expand,
) -> list[TuningInstance]:
    """Load instances from JSONL of {query_id, query_text, candidate_ids, gold_scores}.

    ``expand`` maps (query_text, query_id) to an ExpandedQuery; gold_scores
    may be a doc-id map or an array parallel to candidate_ids.
    """
    path = Path(path)
    instances: list[TuningInstance] = []
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(
                    f"{path}: line {line_no}: malformed JSON ({exc.msg})"
                ) from exc
            try:
                query_id = obj["query_id"]
                query_text = obj["query_text"]
                candidate_ids = obj["candidate_ids"]
                gold_scores = obj["gold_scores"]
            except KeyError as exc:
                raise ValidationError(
                    f"{path}: line {line_no}: missing field {exc}"
                ) from None
            if isinstance(gold_scores, list):
                if len(gold_scores) != len(candidate_ids):
                    raise ValidationError(
                        f"{path}: line {line_no}: gold_scores length "
                        f"{len(gold_scores)} != candidate_ids length {len(candidate_ids)}"
                    )
                gold = {doc_id: float(s) for doc_id, s in zip(candidate_ids, gold_scores)}
            elif isinstance(gold_scores, dict):
                gold = {doc_id: float(s) for doc_id, s in gold_scores.items()}
            else:
                raise ValidationError(
                    f"{path}: line {line_no}: gold_scores must be a list or object"
                )
            expanded = expand(query_text, query_id)
            docs = [corpus.get(doc_id) for doc_id in candidate_ids]
            candidates = CandidateSet(
                query_id=query_id,
                candidates=tuple(
                    sorted(
                        ((doc, 0.0) for doc in docs),
                        key=lambda pair: pair[0].id,
                    )
                ),
            )
            instances.append(
                TuningInstance(expanded_query=expanded, candidates=candidates, gold_ce=gold)
            )
    return instances


__all__ = [
    "DEFAULT_GRID_VALUES",
    "GridSpec",
    "TuningInstance",
    "first_step_components",
    "gold_entropy",
    "grid_search",
    "listwise_loss",
    "load_tuning_instances",
]
