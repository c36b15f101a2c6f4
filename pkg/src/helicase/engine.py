"""The helical loop: plan, execute, mutate, quantify uncertainty, check
convergence. Maintains the state tuple (actions, graph, uncertainty layers),
writes auditable line-delimited JSON run logs, and produces the final
uncertainty-annotated answer."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import prompts
from .agents import ActionResult, GraphMutation, run_actions_parallel
from .config import RunConfig, write_config_echo
from .kg import EvidenceRef, KGError, KnowledgeGraph
from .planner import (
    Action,
    ConvergenceState,
    PlannerContext,
    check_convergence,
    decompose_query,
    generate_candidates,
    parallel_query_count,
    select_actions,
)
from .providers import MissingFixtureError, ProviderSuite, build_fixture_suite
from .uncertainty import (
    accumulate_fact,
    init_new_fact,
    memory_uncertainty,
    trajectory_redundancy,
)

logger = logging.getLogger(__name__)

KG_SUMMARY_TOP_N = 40


class RunError(RuntimeError):
    """Structured, unrecoverable run failure (e.g. decomposition hard-fail)."""


@dataclass
class AnswerReport:
    text: str
    facts: list[dict] = field(default_factory=list)  # {text, confidence}
    sources: list[str] = field(default_factory=list)


@dataclass
class IterationState:
    t: int
    actions: list[Action]
    results: list[ActionResult]
    graph: KnowledgeGraph
    u_action_map: dict
    u_trajectory: float
    u_memory: float


@dataclass
class RunResult:
    final_graph: KnowledgeGraph
    answer: AnswerReport
    u_memory_trace: list[float]
    iterations_run: int
    converged_by: str
    tokens_total: int
    log_path: str


class RunLog:
    """Line-delimited JSON event log."""

    def __init__(self, path: Path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")

    def event(self, kind: str, iteration: int, **payload) -> None:
        doc = {"event": kind, "iteration": iteration, "ts": time.time()}
        doc.update(payload)
        self._fh.write(json.dumps(doc, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _kg_summary(graph: KnowledgeGraph, top_n: int = KG_SUMMARY_TOP_N) -> str:
    """Top-N highest-uncertainty facts plus graph statistics; truncation
    keeps planner prompts bounded."""
    facts = sorted(
        ((graph.fact_text(f), f.uncertainty) for f in graph.all_facts()),
        key=lambda item: (-item[1], item[0]),
    )
    lines = [f"{len(graph.nodes)} entities, {len(graph.edges)} relations."]
    lines += [f"- {text} (U={u:.4f})" for text, u in facts[:top_n]]
    return "\n".join(lines)


def _high_u_facts(graph: KnowledgeGraph, tau_high: float) -> list[tuple[str, float]]:
    facts = graph.high_uncertainty_facts(tau_high)
    return sorted(
        ((graph.fact_text(f), f.uncertainty) for f in facts),
        key=lambda item: (-item[1], item[0]),
    )


def _history_text(entries: Sequence[tuple[Action, float, bool]]) -> str:
    lines = []
    for action, u, redundant in entries:
        flag = " [redundant]" if redundant else ""
        lines.append(
            f"{action.id} [{action.agent_type}] {action.description} "
            f"(U={u:.4f}){flag}"
        )
    return "\n".join(lines)


def _apply_mutations(
    graph: KnowledgeGraph,
    results: Sequence[ActionResult],
    u_action_map: dict,
    result_urls: dict,
    iteration: int,
    rule,
    log: RunLog,
) -> None:
    """Apply coding-agent mutation batches in deterministic order (action id,
    then mutation index), then update every touched fact's uncertainty once:
    new facts via the strongest-evidence rule, existing facts via
    accumulation."""
    coding = sorted(
        (r for r in results if r.agent_type == "coding" and r.mutations),
        key=lambda r: r.action_id,
    )
    touched: dict[tuple[str, str], set[str]] = {}
    created: set[tuple[str, str]] = set()

    def evidence_for(sid: str) -> EvidenceRef:
        return EvidenceRef(
            action_id=sid,
            iteration=iteration,
            action_uncertainty=u_action_map[sid].value,
            source_urls=list(result_urls.get(sid, [])),
        )

    def upsert(label: str, node_type: str, supports: list[str]) -> Optional[str]:
        nid, outcome = graph.upsert_entity(label, node_type, evidence_for(supports[0]))
        node = graph.nodes[nid]
        for sid in supports[1:]:
            node.evidence.append(evidence_for(sid))
        if outcome == "created":
            created.add(("entity", nid))
        touched.setdefault(("entity", nid), set()).update(supports)
        return nid

    for result in coding:
        for idx, mut in enumerate(result.mutations):
            supports = [s for s in mut.support if s in u_action_map]
            dropped = set(mut.support) - set(supports)
            if dropped:
                logger.warning(
                    "mutation %s[%d]: unknown support ids %s dropped",
                    result.action_id, idx, sorted(dropped),
                )
            try:
                if mut.op == "add_entity":
                    if not supports:
                        raise KGError("no valid supporting actions")
                    nid = upsert(mut.label, mut.node_type or "entity", supports)
                    log.event("mutation", iteration, op="add_entity",
                              action=result.action_id, node=nid, label=mut.label)
                elif mut.op == "add_edge":
                    if not supports:
                        raise KGError("no valid supporting actions")
                    head = graph.resolve_entity(mut.head) or upsert(
                        mut.head, "entity", supports
                    )
                    tail = graph.resolve_entity(mut.tail) or upsert(
                        mut.tail, "entity", supports
                    )
                    before = set(graph.edges)
                    eid = graph.add_edge(head, mut.relation, tail,
                                         evidence_for(supports[0]))
                    edge = graph.edges[eid]
                    for sid in supports[1:]:
                        edge.evidence.append(evidence_for(sid))
                    if eid not in before:
                        created.add(("relation", eid))
                    touched.setdefault(("relation", eid), set()).update(supports)
                    log.event("mutation", iteration, op="add_edge",
                              action=result.action_id, edge=eid)
                elif mut.op == "mark_decomposed":
                    nid = graph.resolve_entity(mut.label)
                    if nid is None:
                        raise KGError(f"unknown entity {mut.label!r}")
                    graph.mark_decomposed(nid)
                    log.event("mutation", iteration, op="mark_decomposed",
                              action=result.action_id, node=nid)
                else:  # revise_note
                    nid = graph.resolve_entity(mut.label)
                    if nid is None:
                        raise KGError(f"unknown entity {mut.label!r}")
                    graph.nodes[nid].notes.append(mut.note or "")
                    log.event("mutation", iteration, op="revise_note",
                              action=result.action_id, node=nid)
            except KGError as exc:
                logger.warning("mutation %s[%d] rejected: %s",
                               result.action_id, idx, exc)
                log.event("mutation-rejected", iteration,
                          action=result.action_id, index=idx, reason=str(exc))

    for (kind, ref_id) in sorted(touched):
        supports = sorted(touched[(kind, ref_id)])
        sup = [u_action_map[sid] for sid in supports]
        if (kind, ref_id) in created:
            value = init_new_fact(sup)
        else:
            value = accumulate_fact(graph.fact_uncertainty(kind, ref_id), sup, rule)
        graph.set_fact_uncertainty(kind, ref_id, value)


def _distinct_source_domains(graph: KnowledgeGraph) -> dict[str, int]:
    """Evidence-independence is not enforced; the count of distinct source
    domains per fact is surfaced in the run log instead."""
    counts = {}
    for node in graph.nodes.values():
        domains = {u.split("/")[2] for e in node.evidence for u in e.source_urls
                   if u.count("/") >= 2}
        counts[node.id] = len(domains)
    return counts


def extract_answer(
    graph: KnowledgeGraph, query: str, chat, model: str
) -> AnswerReport:
    """One chat call over the serialized graph; attaches every fact whose
    labels appear in the answer, with confidence exactly 1 - U(f)."""
    if not graph.nodes:
        raise RunError("cannot extract an answer from an empty graph")
    fact_lines = sorted(
        (graph.fact_text(f), f.uncertainty) for f in graph.all_facts()
    )
    facts_text = "\n".join(
        f"- {text} (confidence={1.0 - u:.4f})" for text, u in fact_lines
    )
    prompt = prompts.render(prompts.EXTRACT_ANSWER, QUERY=query, FACTS=facts_text)
    try:
        text = chat.complete([{"role": "user", "content": prompt}], model)
    except Exception as exc:  # noqa: BLE001 - templated fallback
        logger.warning("answer extraction chat failed: %s", exc)
        top = sorted(fact_lines, key=lambda item: (item[1], item[0]))[:10]
        text = "Highest-confidence findings:\n" + "\n".join(
            f"- {t} (confidence={1.0 - u:.4f})" for t, u in top
        )

    lower = text.lower()
    attached = []
    for fact in graph.all_facts():
        if fact.kind == "entity":
            hit = graph.nodes[fact.ref_id].label.lower() in lower
        else:
            edge = graph.edges[fact.ref_id]
            hit = (
                graph.nodes[edge.head].label.lower() in lower
                and graph.nodes[edge.tail].label.lower() in lower
            )
        if hit:
            attached.append(
                {
                    "text": graph.fact_text(fact),
                    "confidence": 1.0 - fact.uncertainty,
                }
            )
    attached.sort(key=lambda d: (-d["confidence"], d["text"]))
    sources = sorted(
        {
            u
            for node in graph.nodes.values()
            for e in node.evidence
            for u in e.source_urls
        }
        | {
            u
            for edge in graph.edges.values()
            for e in edge.evidence
            for u in e.source_urls
        }
    )
    return AnswerReport(text=text, facts=attached, sources=sources)


def _size_queries(
    action: Action, graph: KnowledgeGraph, config: RunConfig, chat, model: str
) -> int:
    if config.force_n1:
        return 1
    target_u = 1.0
    if action.target_concept:
        nid = graph.resolve_entity(action.target_concept)
        if nid is not None:
            target_u = graph.nodes[nid].uncertainty
    if target_u <= config.tau_low:
        return config.n_min
    prompt = prompts.render(
        prompts.DIFFICULTY,
        N_MIN=config.n_min,
        N_MAX=config.n_max,
        DESCRIPTION=action.description,
        TARGET_U=f"{target_u:.4f}",
    )
    try:
        hint = chat.complete([{"role": "user", "content": prompt}], model)
    except Exception as exc:  # noqa: BLE001
        logger.warning("difficulty hint failed for %s: %s", action.id, exc)
        hint = None
    return parallel_query_count(
        target_u, hint, config.n_min, config.n_max, config.tau_low
    )


def run(
    query: str, config: RunConfig, suite: ProviderSuite, out_dir
) -> RunResult:
    """Execute the full helical loop for one query."""
    if not query or not query.strip():
        raise RunError("query is empty")
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config_echo(config, out / "config.json")
    log = RunLog(out / "run.jsonl")
    log.event("run-start", 0, query=query, prompt_version=prompts.PROMPT_VERSION)

    models = dict(config.agent_model_tags)
    concurrency = config.concurrency_limit
    if config.one_agent:
        # One-agent ablation: a single model drives every role, sequentially.
        single = models["planner"]
        models = {k: single for k in models}
        concurrency = 1

    graph = KnowledgeGraph()
    history: list[Action] = []
    history_entries: list[tuple[Action, float, bool]] = []
    prior_results: list[ActionResult] = []
    trace: list[float] = []
    conv = ConvergenceState(t_max=config.t_max)
    prev_traj = 0.0
    tokens_total = 0

    try:
        actions = decompose_query(query, suite.chat, models["planner"])
    except MissingFixtureError:
        log.close()
        raise
    except Exception as exc:
        log.event("run-error", 0, reason=str(exc))
        log.close()
        raise RunError(f"decomposition failed: {exc}") from exc
    log.event("plan", 0, actions=[dataclasses.asdict(a) for a in actions])

    converged_by = "hard_cap"
    t = 0
    while t < config.t_max:
        t += 1
        n_for = {}
        for a in actions:
            if a.agent_type == "web_search":
                n_for[a.id] = _size_queries(a, graph, config, suite.chat,
                                            models["planner"])
        log.event("iteration-start", t,
                  actions=[a.id for a in actions], n_for=n_for)

        for a in actions:
            log.event("action-start", t, action=a.id, agent_type=a.agent_type)
        results = run_actions_parallel(
            actions,
            suite,
            n_for=n_for,
            models=models,
            prior_results=prior_results,
            concurrency=concurrency,
        )
        for r in results:
            tokens_total += r.tokens_used
            log.event("action-end", t, action=r.action_id,
                      uncertainty=r.uncertainty.value, error=r.error,
                      tokens=r.tokens_used)

        # Stage 1: action-layer uncertainties.
        u_action_map = {r.action_id: r.uncertainty for r in results}
        log.event("uq-stage", t, stage=1,
                  u_action={k: v.value for k, v in sorted(u_action_map.items())})

        result_urls = {r.action_id: r.evidence_urls for r in results}
        _apply_mutations(graph, results, u_action_map, result_urls, t,
                         config.accumulation_rule, log)

        # Stage 2: trajectory-layer redundancy.
        traj = trajectory_redundancy(actions, history, suite.embedder)
        log.event("uq-stage", t, stage=2,
                  u_trajectory=traj.trajectory_uncertainty,
                  rho=dict(traj.per_action_rho))

        # Stage 3: memory-layer uncertainty.
        mem = memory_uncertainty(graph)
        log.event("uq-stage", t, stage=3, u_memory=mem.value,
                  degenerate=mem.degenerate,
                  source_domains=_distinct_source_domains(graph))

        trace.append(mem.value)
        conv = check_convergence(
            ConvergenceState(u_memory_trace=trace,
                             stagnant_count=conv.stagnant_count,
                             t_max=config.t_max),
            config.delta_conv, config.patience,
        )
        log.event("convergence", t, converged=conv.converged,
                  converged_by=conv.converged_by,
                  stagnant_count=conv.stagnant_count, u_memory=mem.value)

        rho_by_action = dict(traj.per_action_rho)
        for a in actions:
            history_entries.append(
                (a, u_action_map[a.id].value,
                 rho_by_action.get(a.id, 0.0) > config.tau_rho)
            )
        history.extend(actions)
        prior_results.extend(
            r for r in results if r.agent_type != "coding" and not r.error
        )
        prev_traj = traj.trajectory_uncertainty

        if conv.converged:
            converged_by = conv.converged_by
            break

        ctx = PlannerContext(
            query=query,
            graph_summary=_kg_summary(graph),
            high_u_facts=_high_u_facts(graph, config.tau_high),
            search_history=_history_text(history_entries),
            prev_trajectory_u=prev_traj,
            iteration=t + 1,
        )
        candidates = generate_candidates(
            ctx, suite.chat, suite.embedder,
            model=models["planner"],
            u_memory=mem.value,
            alpha=config.alpha,
            cost_table=config.cost_table,
            tau_rho=config.tau_rho,
            history=history,
            uniform_priority=config.uniform_priority,
        )
        log.event("plan", t + 1, candidates=[
            {"id": c.action.id, "priority": c.priority, "cost": c.cost,
             "delta_u": c.delta_u, "redundant": c.redundant}
            for c in candidates
        ])
        next_actions = select_actions(candidates, config.k_actions)
        if not next_actions:
            # Planner signalled exhaustion; nothing left worth executing.
            converged_by = "stagnation"
            break
        actions = next_actions

    answer = extract_answer(graph, query, suite.chat, models["planner"])

    snapshot_path = out / "graph.json"
    snapshot_path.write_bytes(graph.snapshot())
    with open(out / "answer.json", "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(answer), fh, sort_keys=True, indent=1)
        fh.write("\n")
    log.event("run-end", t, converged_by=converged_by, iterations=t,
              u_memory_trace=trace, tokens_total=tokens_total)
    log.close()

    return RunResult(
        final_graph=graph,
        answer=answer,
        u_memory_trace=trace,
        iterations_run=t,
        converged_by=converged_by,
        tokens_total=tokens_total,
        log_path=str(out / "run.jsonl"),
    )


def replay(fixture_dir, config: RunConfig, out_dir) -> RunResult:
    """Identical to run() but with every provider mocked from fixtures.
    Two invocations produce byte-identical final snapshots."""
    fixture_dir = Path(fixture_dir)
    meta_path = fixture_dir / "meta.json"
    if not meta_path.exists():
        raise RunError(f"fixture directory {fixture_dir} has no meta.json")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    suite = build_fixture_suite(fixture_dir)
    return run(meta["query"], config, suite, out_dir)
