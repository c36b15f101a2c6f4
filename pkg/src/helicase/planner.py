"""Planning: query decomposition, candidate generation, priority ranking,
parallel-query sizing and stagnation-based convergence detection."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import prompts
from .uncertainty import cosine_clamped

AGENT_TYPES = ("web_search", "reasoning", "coding")


class PlanningError(RuntimeError):
    """Unrecoverable planner failure (a run cannot start without a plan)."""


@dataclass
class Action:
    id: str
    description: str
    agent_type: str
    target_concept: Optional[str] = None
    iteration: int = 0

    def __post_init__(self):
        if not self.description:
            raise ValueError("action description is empty")
        if self.agent_type not in AGENT_TYPES:
            raise ValueError(f"unknown agent type {self.agent_type!r}")


@dataclass
class CandidateAction:
    action: Action
    delta_u: float
    cost: float
    priority: float
    redundant: bool


@dataclass
class PlannerContext:
    query: str
    graph_summary: str
    high_u_facts: list[tuple[str, float]]  # (fact text, uncertainty)
    search_history: str
    prev_trajectory_u: float
    iteration: int


@dataclass
class ConvergenceState:
    u_memory_trace: list[float] = field(default_factory=list)
    stagnant_count: int = 0
    converged: bool = False
    converged_by: Optional[str] = None  # "stagnation" | "hard_cap"
    t_max: int = 10


def _extract_json_array(reply: str) -> list:
    try:
        data = json.loads(reply)
        if isinstance(data, list):
            return data
    except json.JSONDecodeError:
        pass
    m = re.search(r"\[.*\]", reply, re.DOTALL)
    if m:
        data = json.loads(m.group(0))
        if isinstance(data, list):
            return data
    raise ValueError(f"no JSON array in planner reply: {reply[:200]!r}")


def _parse_proposals(reply: str) -> list[dict]:
    items = _extract_json_array(reply)
    proposals = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ValueError(f"proposal {i} is not an object")
        desc = item.get("description")
        agent_type = item.get("agent_type")
        if not desc or agent_type not in AGENT_TYPES:
            raise ValueError(f"proposal {i} malformed: {item!r}")
        proposals.append(
            {
                "description": desc,
                "agent_type": agent_type,
                "target_concept": item.get("target_concept"),
            }
        )
    return proposals


def _chat_proposals(chat, model: str, prompt: str) -> list[dict]:
    reply = chat.complete([{"role": "user", "content": prompt}], model)
    try:
        return _parse_proposals(reply)
    except ValueError:
        reply = chat.complete(
            [{"role": "user", "content": prompt + prompts.FORMAT_REMINDER}], model
        )
        return _parse_proposals(reply)


def decompose_query(query: str, chat, model: str) -> list[Action]:
    """Initial decomposition of the query into the action set A^(0)."""
    if not query or not query.strip():
        raise ValueError("query is empty")
    prompt = prompts.render(prompts.DECOMPOSE, QUERY=query)
    try:
        proposals = _chat_proposals(chat, model, prompt)
    except ValueError as exc:
        raise PlanningError(f"query decomposition failed: {exc}") from exc
    if not proposals:
        raise PlanningError("query decomposition produced no actions")
    return [
        Action(
            id=f"t0-a{i + 1}",
            description=p["description"],
            agent_type=p["agent_type"],
            target_concept=p["target_concept"],
            iteration=0,
        )
        for i, p in enumerate(proposals)
    ]


def estimate_delta_u(
    description: str,
    high_u_fact_texts: Sequence[str],
    u_memory: float,
    alpha: float,
    embedder,
) -> float:
    """Estimated uncertainty reduction: max similarity to a high-uncertainty
    fact text, scaled by U_memory and alpha. With no high-uncertainty facts
    the similarity factor defaults to 1 so ranking degrades to cost
    sensitivity instead of collapsing to zero."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not 0.0 <= u_memory <= 1.0:
        raise ValueError("u_memory outside [0, 1]")
    if not high_u_fact_texts:
        sim = 1.0
    else:
        vec = embedder.embed(description)
        sim = max(
            cosine_clamped(vec, embedder.embed(text)) for text in high_u_fact_texts
        )
    return sim * u_memory * alpha


def generate_candidates(
    ctx: PlannerContext,
    chat,
    embedder,
    *,
    model: str,
    u_memory: float,
    alpha: float,
    cost_table: dict[str, float],
    tau_rho: float,
    history: Sequence[Action],
    uniform_priority: bool = False,
) -> list[CandidateAction]:
    """Ask the planner model for next-iteration proposals and rank them.

    An empty-but-valid proposal list is legal and signals exhaustion.
    ``uniform_priority`` is the no-UQ ablation: priority = 1/cost.
    """
    prompt = prompts.render(
        prompts.CANDIDATES,
        ITERATION=ctx.iteration,
        QUERY=ctx.query,
        KG_SUMMARY=ctx.graph_summary,
        HIGH_U_FACTS="\n".join(
            f"- {text} (U={u:.4f})" for text, u in ctx.high_u_facts
        )
        or "(none)",
        HISTORY=ctx.search_history or "(none)",
        TRAJECTORY_U=f"{ctx.prev_trajectory_u:.4f}",
    )
    try:
        proposals = _chat_proposals(chat, model, prompt)
    except ValueError as exc:
        raise PlanningError(f"candidate generation failed: {exc}") from exc

    history_vecs = [embedder.embed(a.description) for a in history]
    fact_texts = [text for text, _ in ctx.high_u_facts]
    candidates = []
    for i, p in enumerate(proposals):
        action = Action(
            id=f"t{ctx.iteration}-a{i + 1}",
            description=p["description"],
            agent_type=p["agent_type"],
            target_concept=p["target_concept"],
            iteration=ctx.iteration,
        )
        cost = cost_table[action.agent_type]
        if uniform_priority:
            delta_u = 0.0
            priority = 1.0 / cost
        else:
            delta_u = estimate_delta_u(
                action.description, fact_texts, u_memory, alpha, embedder
            )
            priority = delta_u / cost
        if history_vecs:
            vec = embedder.embed(action.description)
            max_sim = max(cosine_clamped(vec, h) for h in history_vecs)
        else:
            max_sim = 0.0
        candidates.append(
            CandidateAction(
                action=action,
                delta_u=delta_u,
                cost=cost,
                priority=priority,
                redundant=max_sim > tau_rho,
            )
        )
    return candidates


def select_actions(candidates: Sequence[CandidateAction], k: int) -> list[Action]:
    """Deterministic top-k selection: priority desc, cost asc, description asc.

    Redundant candidates are deprioritized, not dropped: they backfill when
    fewer than k non-redundant candidates exist."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(
        candidates, key=lambda c: (-c.priority, c.cost, c.action.description)
    )
    fresh = [c for c in ordered if not c.redundant]
    stale = [c for c in ordered if c.redundant]
    picked = (fresh + stale)[:k]
    return [c.action for c in picked]


def parallel_query_count(
    target_uncertainty: float,
    difficulty_hint: Optional[str],
    n_min: int,
    n_max: int,
    tau_low: float,
) -> int:
    """Number of parallel queries n for one web-search action.

    Low-uncertainty targets get n_min to conserve resources; otherwise the
    model's difficulty hint is parsed and clamped, defaulting to the midpoint
    when unparseable."""
    if not 1 <= n_min <= n_max:
        raise ValueError("need 1 <= n_min <= n_max")
    if target_uncertainty <= tau_low:
        return n_min
    hint_value = None
    if difficulty_hint:
        m = re.search(r"-?\d+", difficulty_hint)
        if m:
            hint_value = int(m.group(0))
    if hint_value is None:
        return math.ceil((n_min + n_max) / 2)
    return min(n_max, max(n_min, hint_value))


def check_convergence(
    state: ConvergenceState, delta_conv: float, patience: int
) -> ConvergenceState:
    """Stagnation detection over the U_memory trace.

    The latest relative change below delta_conv extends the stagnation
    streak; convergence needs a full patience streak after at least three
    iterations, or hitting the hard cap. A zero prior U_memory counts as
    stagnant: nothing is left to reduce."""
    trace = state.u_memory_trace
    if not trace:
        raise ValueError("u_memory_trace is empty")
    t = len(trace)
    stagnant_count = state.stagnant_count
    if t >= 2:
        prev, curr = trace[-2], trace[-1]
        if prev == 0.0:
            stagnant = True
        else:
            stagnant = abs(curr - prev) / prev < delta_conv
        stagnant_count = stagnant_count + 1 if stagnant else 0
    converged_by = None
    if stagnant_count >= patience and t > 2:
        converged_by = "stagnation"
    elif t >= state.t_max:
        converged_by = "hard_cap"
    return ConvergenceState(
        u_memory_trace=list(trace),
        stagnant_count=stagnant_count,
        converged=converged_by is not None,
        converged_by=converged_by,
        t_max=state.t_max,
    )
