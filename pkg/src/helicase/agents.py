"""Worker-agent execution paths.

Web search: n parallel query variants, page reading, per-variant synthesis,
consensus scoring. Reasoning: cross-source synthesis over accumulated
findings, judged for internal consistency. Coding: structured JSON mutation
extraction with binary success/failure uncertainty.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import prompts
from .planner import Action
from .uncertainty import ActionUncertainty, consensus_uncertainty

logger = logging.getLogger(__name__)

PAGE_FANOUT = 3  # top search results read per query variant
FALLBACK_SUFFIXES = ("supplier details", "industry sources", "official filings")

MUTATION_OPS = ("add_entity", "add_edge", "mark_decomposed", "revise_note")


class MutationParseError(ValueError):
    pass


@dataclass
class GraphMutation:
    op: str
    action_id: str
    label: Optional[str] = None
    node_type: Optional[str] = None
    head: Optional[str] = None
    relation: Optional[str] = None
    tail: Optional[str] = None
    note: Optional[str] = None
    support: list[str] = field(default_factory=list)


@dataclass
class ActionResult:
    action_id: str
    agent_type: str
    answer_text: str
    uncertainty: ActionUncertainty
    evidence_urls: list[str] = field(default_factory=list)
    raw_results: list[str] = field(default_factory=list)
    tokens_used: int = 0
    mutations: list[GraphMutation] = field(default_factory=list)
    error: Optional[str] = None


def _tokens(text: str) -> int:
    return len(re.findall(r"\S+", text))


def _error_result(action: Action, reason: str) -> ActionResult:
    return ActionResult(
        action_id=action.id,
        agent_type=action.agent_type,
        answer_text="",
        uncertainty=ActionUncertainty(action.id, 1.0, "fixed"),
        error=reason,
    )


def _chat(suite, prompt: str, model: str) -> str:
    return suite.chat.complete([{"role": "user", "content": prompt}], model)


def _query_variants(action: Action, n: int, suite, model: str) -> tuple[list[str], int]:
    if n == 1:
        return [action.description], 0
    prompt = prompts.render(prompts.PARAPHRASE, N=n, DESCRIPTION=action.description)
    try:
        reply = _chat(suite, prompt, model)
        variants = json.loads(reply)
        if (
            isinstance(variants, list)
            and len(variants) >= 1
            and all(isinstance(v, str) and v for v in variants)
        ):
            return variants[:n], _tokens(reply)
    except (ValueError, KeyError) as exc:
        logger.warning("paraphrase generation failed for %s: %s", action.id, exc)
    # Fallback: disambiguating keyword suffixes on the raw description.
    variants = [action.description]
    for suffix in FALLBACK_SUFFIXES:
        if len(variants) >= n:
            break
        variants.append(f"{action.description} {suffix}")
    return variants[:n], 0


def _synthesize_variant(
    action: Action, query: str, suite, model: str
) -> tuple[str, list[str], int]:
    results = suite.search.search(query)[:PAGE_FANOUT]
    pages, urls = [], []
    for r in results:
        page = suite.reader.read(r["url"])
        pages.append(f"[{r['url']}] ({page.get('modality', 'html')})\n{page['text']}")
        urls.append(r["url"])
    prompt = prompts.render(
        prompts.SYNTHESIZE,
        DESCRIPTION=action.description,
        QUERY=query,
        PAGES="\n\n".join(pages) or "(no results)",
    )
    reply = _chat(suite, prompt, model)
    tokens = _tokens(reply)
    try:
        doc = json.loads(reply)
        return str(doc["answer"]), list(doc.get("sources", [])), tokens
    except (ValueError, KeyError, TypeError):
        return reply, urls, tokens


def execute_web_search(action: Action, n: int, suite, model: str) -> ActionResult:
    """Run n query variants, synthesize each, score consensus over the n
    answers. Partial variant failures proceed with the surviving subset; a
    total failure yields an error result with uncertainty 1.0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if action.agent_type != "web_search":
        raise ValueError(f"{action.id} is not a web_search action")
    variants, tokens = _query_variants(action, n, suite, model)
    answers, all_urls = [], []
    for query in variants:
        try:
            answer, urls, t = _synthesize_variant(action, query, suite, model)
            answers.append(answer)
            all_urls.extend(urls)
            tokens += t
        except Exception as exc:  # noqa: BLE001 - isolate per-variant failures
            logger.warning("variant %r failed for %s: %s", query, action.id, exc)
    if not answers:
        return _error_result(action, "all query variants failed")
    uncertainty = consensus_uncertainty(action, answers, suite.judge)
    if len(answers) == 1:
        merged = answers[0]
    else:
        prompt = prompts.render(
            prompts.MERGE,
            DESCRIPTION=action.description,
            ANSWERS="\n\n".join(f"{i + 1}. {a}" for i, a in enumerate(answers)),
        )
        merged = _chat(suite, prompt, model)
        tokens += _tokens(merged)
    seen = set()
    evidence_urls = [u for u in all_urls if not (u in seen or seen.add(u))]
    return ActionResult(
        action_id=action.id,
        agent_type="web_search",
        answer_text=merged,
        uncertainty=uncertainty,
        evidence_urls=evidence_urls,
        raw_results=answers,
        tokens_used=tokens,
    )


def execute_reasoning(
    action: Action, evidence: Sequence[ActionResult], suite, model: str
) -> ActionResult:
    """One synthesis call over the evidence texts, judged for internal
    consistency."""
    if action.agent_type != "reasoning":
        raise ValueError(f"{action.id} is not a reasoning action")
    evidence_text = "\n\n".join(
        f"[{r.action_id}] {r.answer_text}" for r in evidence if r.answer_text
    )
    prompt = prompts.render(
        prompts.REASONING,
        DESCRIPTION=action.description,
        EVIDENCE=evidence_text or "(no evidence gathered yet)",
    )
    try:
        conclusion = _chat(suite, prompt, model)
    except Exception as exc:  # noqa: BLE001
        logger.warning("reasoning chat failed for %s: %s", action.id, exc)
        return _error_result(action, str(exc))
    uncertainty = consensus_uncertainty(action, [conclusion], suite.judge)
    urls = sorted({u for r in evidence for u in r.evidence_urls})
    return ActionResult(
        action_id=action.id,
        agent_type="reasoning",
        answer_text=conclusion,
        uncertainty=uncertainty,
        evidence_urls=urls,
        raw_results=[conclusion],
        tokens_used=_tokens(conclusion),
    )


def parse_mutations(reply: str, action_id: str) -> list[GraphMutation]:
    """Parse and validate a JSON mutation array; purely a function of the
    reply bytes. Violations name the offending element index."""
    try:
        items = json.loads(reply)
    except json.JSONDecodeError as exc:
        raise MutationParseError(f"mutation reply is not JSON: {exc}") from exc
    if not isinstance(items, list):
        raise MutationParseError("mutation reply must be a JSON array")
    mutations = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise MutationParseError(f"element {i}: not an object")
        op = item.get("op")
        if op not in MUTATION_OPS:
            raise MutationParseError(f"element {i}: unknown op {op!r}")
        support = item.get("support", [])
        if op == "add_entity":
            if not item.get("label") or not support:
                raise MutationParseError(
                    f"element {i}: add_entity needs label and non-empty support"
                )
            mutations.append(
                GraphMutation(
                    op=op,
                    action_id=action_id,
                    label=item["label"],
                    node_type=item.get("node_type", "entity"),
                    support=list(support),
                )
            )
        elif op == "add_edge":
            if not all(item.get(k) for k in ("head", "relation", "tail")) or not support:
                raise MutationParseError(
                    f"element {i}: add_edge needs head/relation/tail and support"
                )
            mutations.append(
                GraphMutation(
                    op=op,
                    action_id=action_id,
                    head=item["head"],
                    relation=item["relation"],
                    tail=item["tail"],
                    support=list(support),
                )
            )
        elif op == "mark_decomposed":
            if not item.get("label"):
                raise MutationParseError(f"element {i}: mark_decomposed needs label")
            mutations.append(
                GraphMutation(op=op, action_id=action_id, label=item["label"])
            )
        else:  # revise_note
            if not item.get("label") or "note" not in item:
                raise MutationParseError(f"element {i}: revise_note needs label/note")
            mutations.append(
                GraphMutation(
                    op=op, action_id=action_id, label=item["label"], note=item["note"]
                )
            )
    return mutations


def execute_coding(
    action: Action, findings: Sequence[ActionResult], suite, model: str
) -> ActionResult:
    """Structured JSON extraction into graph mutations; binary uncertainty.

    One retry with a format reminder; a second invalid reply yields no
    mutations and U=1."""
    if action.agent_type != "coding":
        raise ValueError(f"{action.id} is not a coding action")
    findings_text = "\n\n".join(
        f"[{r.action_id}] (U={r.uncertainty.value:.4f}) {r.answer_text}"
        for r in findings
        if r.answer_text
    )
    prompt = prompts.render(
        prompts.MUTATIONS, DESCRIPTION=action.description, FINDINGS=findings_text
    )
    tokens = 0
    mutations = None
    for attempt in range(2):
        attempt_prompt = prompt if attempt == 0 else prompt + prompts.FORMAT_REMINDER
        try:
            reply = _chat(suite, attempt_prompt, model)
        except Exception as exc:  # noqa: BLE001
            logger.warning("coding chat failed for %s: %s", action.id, exc)
            break
        tokens += _tokens(reply)
        try:
            mutations = parse_mutations(reply, action.id)
            break
        except MutationParseError as exc:
            logger.warning(
                "mutation parse failed for %s (attempt %d): %s",
                action.id,
                attempt + 1,
                exc,
            )
    if mutations is None:
        return ActionResult(
            action_id=action.id,
            agent_type="coding",
            answer_text="",
            uncertainty=ActionUncertainty(action.id, 1.0, "binary"),
            tokens_used=tokens,
            error="extraction failed",
        )
    return ActionResult(
        action_id=action.id,
        agent_type="coding",
        answer_text=f"{len(mutations)} mutations",
        uncertainty=ActionUncertainty(action.id, 0.0, "binary"),
        tokens_used=tokens,
        mutations=mutations,
    )


def run_actions_parallel(
    actions: Sequence[Action],
    suite,
    *,
    n_for: dict[str, int],
    models: dict[str, str],
    prior_results: Sequence[ActionResult] = (),
    concurrency: int = 8,
) -> list[ActionResult]:
    """Execute one iteration's actions: web search and reasoning concurrently
    up to the limit, coding afterwards (mutations need the findings). Results
    come back in input order; individual failures never abort the batch."""
    if not actions:
        raise ValueError("action list is empty")
    results: dict[str, ActionResult] = {}
    evidence_actions = [a for a in actions if a.agent_type != "coding"]
    coding_actions = [a for a in actions if a.agent_type == "coding"]

    def run_one(action: Action) -> ActionResult:
        try:
            if action.agent_type == "web_search":
                return execute_web_search(
                    action, n_for.get(action.id, 1), suite, models["web_search"]
                )
            return execute_reasoning(
                action, prior_results, suite, models["reasoning"]
            )
        except Exception as exc:  # noqa: BLE001 - isolation contract
            logger.warning("action %s failed: %s", action.id, exc)
            return _error_result(action, str(exc))

    if evidence_actions:
        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            for action, result in zip(
                evidence_actions, pool.map(run_one, evidence_actions)
            ):
                results[action.id] = result

    findings = [results[a.id] for a in evidence_actions]
    for action in coding_actions:
        try:
            results[action.id] = execute_coding(
                action, findings, suite, models["coding"]
            )
        except Exception as exc:  # noqa: BLE001
            logger.warning("coding action %s failed: %s", action.id, exc)
            results[action.id] = ActionResult(
                action_id=action.id,
                agent_type="coding",
                answer_text="",
                uncertainty=ActionUncertainty(action.id, 1.0, "binary"),
                error=str(exc),
            )

    return [results[a.id] for a in actions]
