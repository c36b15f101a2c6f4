"""Three-layer uncertainty quantification.

Action layer: consensus scoring of one agent execution's parallel results.
Trajectory layer: redundancy of the current action set against all prior
actions (max cosine similarity of description embeddings, averaged).
Memory layer: per-fact multiplicative accumulation in the knowledge graph,
aggregated over active leaves.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .kg import KnowledgeGraph

if TYPE_CHECKING:
    from .planner import Action

logger = logging.getLogger(__name__)

_UNCERTAINTY_RE = re.compile(r"UNCERTAINTY:\s*([0-9]*\.?[0-9]+)")


class AccumulationRule(str, Enum):
    MULTIPLICATIVE = "multiplicative"
    MIN_BASED = "min_based"  # ablation only: keeps the single best observation


@dataclass
class ActionUncertainty:
    action_id: str
    value: float
    method: str  # "consensus" | "binary" | "fixed"
    n_results: int = 1

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"action uncertainty {self.value} outside [0, 1]")
        if self.method == "binary" and self.value not in (0.0, 1.0):
            raise ValueError("binary uncertainty must be exactly 0 or 1")


@dataclass
class RedundancyReport:
    per_action_rho: list[tuple[str, float]]
    trajectory_uncertainty: float


@dataclass
class MemoryReport:
    value: float
    per_leaf_max: list[tuple[str, float]]
    degenerate: bool = False  # no active leaves: treated as fully uncertain


def parse_judge_reply(text: str) -> float:
    """Extract the decimal from a 'UNCERTAINTY: <decimal>' judge reply."""
    m = _UNCERTAINTY_RE.search(text)
    if m is None:
        raise ValueError(f"no UNCERTAINTY value in judge reply: {text!r}")
    return float(m.group(1))


def consensus_uncertainty(action, results: Sequence[str], judge) -> ActionUncertainty:
    """Score factual consensus over an action's result texts via the judge.

    The judge reply must contain 'UNCERTAINTY: <decimal>'. One retry on an
    unparseable reply; a second failure falls back to maximum uncertainty
    (1.0, method='fixed') since unverifiable evidence must not look reliable.
    """
    if not results:
        raise ValueError("consensus requires at least one result")
    value = None
    for attempt in range(2):
        try:
            reply = judge.assess(action.description, list(results))
            value = parse_judge_reply(reply)
            break
        except (ValueError, KeyError) as exc:
            logger.warning(
                "judge reply unparseable for %s (attempt %d): %s",
                action.id,
                attempt + 1,
                exc,
            )
    if value is None:
        logger.warning("judge failed twice for %s; defaulting to U=1.0", action.id)
        return ActionUncertainty(action.id, 1.0, "fixed", len(results))
    return ActionUncertainty(
        action.id, min(1.0, max(0.0, value)), "consensus", len(results)
    )


def cosine_clamped(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped into [0, 1]; negative similarity reads as
    zero redundancy."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(0.0, float(np.dot(a, b)) / (na * nb)))


def trajectory_redundancy(current, history, embedder) -> RedundancyReport:
    """rho_k = max similarity of each current action to any prior action;
    U_trajectory = mean(rho_k). Empty history means no redundancy (all 0)."""
    if not current:
        raise ValueError("current action set is empty")
    history_vecs = [embedder.embed(a.description) for a in history]
    per_action = []
    for action in current:
        if not history_vecs:
            rho = 0.0
        else:
            vec = embedder.embed(action.description)
            rho = max(cosine_clamped(vec, h) for h in history_vecs)
        per_action.append((action.id, rho))
    mean = sum(r for _, r in per_action) / len(per_action)
    return RedundancyReport(per_action, mean)


def accumulate_fact(
    prior: float,
    supporting: Sequence[ActionUncertainty],
    rule: AccumulationRule = AccumulationRule.MULTIPLICATIVE,
) -> float:
    """Update an existing fact's uncertainty from one iteration's evidence.

    Multiplicative: prior times the product of supporting values (compounding
    confirmation). Min-based: keeps the single most confident observation.
    No evidence leaves the prior unchanged.
    """
    if not 0.0 <= prior <= 1.0:
        raise ValueError(f"prior {prior} outside [0, 1]")
    for s in supporting:
        if not 0.0 <= s.value <= 1.0:
            raise ValueError(f"supporting value {s.value} outside [0, 1]")
    if not supporting:
        return prior
    if rule == AccumulationRule.MIN_BASED:
        return min(prior, min(s.value for s in supporting))
    result = prior
    for s in supporting:
        result *= s.value
    return result


def init_new_fact(supporting: Sequence[ActionUncertainty]) -> float:
    """A new fact inherits the strongest evidence that introduced it."""
    if not supporting:
        raise ValueError("a new fact requires at least one supporting action")
    for s in supporting:
        if not 0.0 <= s.value <= 1.0:
            raise ValueError(f"supporting value {s.value} outside [0, 1]")
    return min(s.value for s in supporting)


def memory_uncertainty(graph: KnowledgeGraph) -> MemoryReport:
    """Mean over active leaves of the max fact uncertainty involving each leaf.

    A graph with no active leaves is degenerate: reported as fully uncertain
    (1.0) so the loop keeps investigating.
    """
    leaves = sorted(graph.active_leaves(), key=_leaf_key)
    if not leaves:
        return MemoryReport(1.0, [], degenerate=True)
    per_leaf = []
    for leaf in leaves:
        max_u = max(f.uncertainty for f in graph.facts_of(leaf))
        per_leaf.append((leaf, max_u))
    value = sum(u for _, u in per_leaf) / len(per_leaf)
    return MemoryReport(value, per_leaf)


def _leaf_key(node_id: str):
    m = re.match(r"([a-z]+)(\d+)$", node_id)
    return (m.group(1), int(m.group(2))) if m else (node_id, 0)
