"""End-to-end engine behaviour against the recorded fixture corpora."""

import json
import shutil
from pathlib import Path

import pytest

from helicase.agents import ActionResult, parse_mutations
from helicase.config import RunConfig
from helicase.engine import (
    RunError,
    RunLog,
    _apply_mutations,
    extract_answer,
    replay,
    run,
)
from helicase.kg import KnowledgeGraph
from helicase.providers import MissingFixtureError
from helicase.uncertainty import AccumulationRule, ActionUncertainty


def ablated(*names):
    cfg = RunConfig()
    for name in names:
        cfg.apply_ablation(name)
    return cfg


@pytest.fixture(scope="module")
def q64_result(tmp_path_factory):
    fixtures = Path(__file__).resolve().parent.parent / "fixtures" / "q64"
    out = tmp_path_factory.mktemp("q64")
    return replay(fixtures, RunConfig(), out), out


def test_q64_graph_shape(q64_result):
    result, _ = q64_result
    assert len(result.final_graph.nodes) == 28
    assert len(result.final_graph.edges) == 45
    assert result.iterations_run == 5
    assert result.converged_by == "stagnation"


def test_q64_final_memory_uncertainty(q64_result):
    result, _ = q64_result
    assert result.u_memory_trace[-1] == pytest.approx(0.20, abs=0.01)


def test_q64_trace_non_increasing(q64_result):
    result, _ = q64_result
    trace = result.u_memory_trace
    assert len(trace) == 5
    assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_q64_answer_names_all_products(q64_result):
    result, _ = q64_result
    for product in ["Model 3", "Model Y", "Cybertruck", "Powerwall", "Megapack"]:
        assert product in result.answer.text


def test_q64_attached_confidence_is_one_minus_u(q64_result):
    result, _ = q64_result
    graph = result.final_graph
    by_text = {graph.fact_text(f): f.uncertainty for f in graph.all_facts()}
    assert result.answer.facts
    for item in result.answer.facts:
        assert item["confidence"] == pytest.approx(1.0 - by_text[item["text"]])


def test_q64_answer_cites_sources(q64_result):
    result, _ = q64_result
    assert result.answer.sources
    assert all(url.startswith("https://") for url in result.answer.sources)


def test_q64_log_stages_in_order(q64_result):
    result, out = q64_result
    events = [json.loads(line) for line in
              (out / "run.jsonl").read_text().splitlines()]
    stages = {}
    for e in events:
        if e["event"] == "uq-stage":
            stages.setdefault(e["iteration"], []).append(e["stage"])
    assert set(stages) == {1, 2, 3, 4, 5}
    for t, seq in stages.items():
        assert seq == [1, 2, 3], f"iteration {t} ran stages {seq}"
    kinds = [e["event"] for e in events]
    assert kinds[0] == "run-start" and kinds[-1] == "run-end"


def test_q64_artifacts_written(q64_result):
    _, out = q64_result
    for name in ("graph.json", "answer.json", "run.jsonl", "config.json"):
        assert (out / name).exists()
    graph_doc = json.loads((out / "graph.json").read_text())
    assert len(graph_doc["nodes"]) == 28


def test_q64_double_replay_byte_identical(q64_fixtures, tmp_path):
    replay(q64_fixtures, RunConfig(), tmp_path / "a")
    replay(q64_fixtures, RunConfig(), tmp_path / "b")
    assert (tmp_path / "a" / "graph.json").read_bytes() == \
        (tmp_path / "b" / "graph.json").read_bytes()
    assert (tmp_path / "a" / "answer.json").read_bytes() == \
        (tmp_path / "b" / "answer.json").read_bytes()


def test_q17_replay(q17_fixtures, tmp_path):
    result = replay(q17_fixtures, RunConfig(), tmp_path / "out")
    assert len(result.final_graph.nodes) == 17
    assert len(result.final_graph.edges) == 29
    assert result.iterations_run == 4
    assert result.converged_by == "stagnation"
    trace = result.u_memory_trace
    assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_min_rule_dominates_multiplicative(q64_fixtures, tmp_path):
    base = replay(q64_fixtures, RunConfig(), tmp_path / "mult")
    mins = replay(q64_fixtures, ablated("min-rule"), tmp_path / "min")
    base_u = {base.final_graph.fact_text(f): f.uncertainty
              for f in base.final_graph.all_facts()}
    min_u = {mins.final_graph.fact_text(f): f.uncertainty
             for f in mins.final_graph.all_facts()}
    assert set(base_u) == set(min_u)
    for text, u in base_u.items():
        assert min_u[text] >= u - 1e-12, text
    assert mins.u_memory_trace[-1] >= base.u_memory_trace[-1]


def test_all_ablations_replay_hermetically(q64_fixtures, tmp_path):
    for name in ("no-uq", "n1", "one-agent"):
        result = replay(q64_fixtures, ablated(name), tmp_path / name)
        assert len(result.final_graph.nodes) == 28
        assert len(result.final_graph.edges) == 45


def test_missing_fixture_is_a_hard_error(q64_fixtures, tmp_path):
    broken = tmp_path / "broken"
    shutil.copytree(q64_fixtures, broken)
    for victim in sorted((broken / "chat").glob("*.json")):
        victim.unlink()
    with pytest.raises(MissingFixtureError) as exc_info:
        replay(broken, RunConfig(), tmp_path / "out")
    err = exc_info.value
    assert err.provider == "chat"
    assert len(err.request_hash) == 24
    assert "never falls back" in str(err)


def test_replay_requires_fixture_dir(tmp_path):
    with pytest.raises(RunError):
        replay(tmp_path / "nope", RunConfig(), tmp_path / "out")


def test_run_rejects_empty_query(tmp_path):
    with pytest.raises(RunError, match="empty"):
        run("   ", RunConfig(), None, tmp_path / "out")


def test_run_validates_config(tmp_path):
    cfg = RunConfig(t_max=0)
    with pytest.raises(ValueError):
        run("query", cfg, None, tmp_path / "out")


def test_extract_answer_rejects_empty_graph():
    with pytest.raises(RunError, match="empty"):
        extract_answer(KnowledgeGraph(), "query", None, "m")


# -- mutation application ------------------------------------------------------


def coding_result(muts, aid="t1-a9"):
    return ActionResult(
        action_id=aid, agent_type="coding", answer_text="",
        uncertainty=ActionUncertainty(aid, 0.0, "binary"), mutations=muts,
    )


def test_apply_mutations_new_fact_uses_min_of_supports(tmp_path):
    graph = KnowledgeGraph()
    muts = parse_mutations(json.dumps([
        {"op": "add_entity", "label": "Pilbara Minerals",
         "node_type": "mining_company", "support": ["t1-a1", "t1-a2"]},
    ]), "t1-a9")
    u_map = {"t1-a1": ActionUncertainty("t1-a1", 0.5, "consensus"),
             "t1-a2": ActionUncertainty("t1-a2", 0.3, "consensus")}
    log = RunLog(tmp_path / "log.jsonl")
    _apply_mutations(graph, [coding_result(muts)], u_map,
                     {"t1-a1": ["https://a.example/1"]}, 1,
                     AccumulationRule.MULTIPLICATIVE, log)
    log.close()
    node = next(iter(graph.nodes.values()))
    assert node.uncertainty == pytest.approx(0.3)
    assert len(node.evidence) == 2


def test_apply_mutations_confirmation_accumulates(tmp_path):
    graph = KnowledgeGraph()
    log = RunLog(tmp_path / "log.jsonl")
    first = parse_mutations(json.dumps([
        {"op": "add_entity", "label": "Tesla", "support": ["t1-a1"]},
    ]), "t1-a9")
    _apply_mutations(graph, [coding_result(first)],
                     {"t1-a1": ActionUncertainty("t1-a1", 0.5, "consensus")},
                     {}, 1, AccumulationRule.MULTIPLICATIVE, log)
    second = parse_mutations(json.dumps([
        {"op": "add_entity", "label": "Tesla", "support": ["t2-a1"]},
    ]), "t2-a9")
    _apply_mutations(graph, [coding_result(second, "t2-a9")],
                     {"t2-a1": ActionUncertainty("t2-a1", 0.4, "consensus")},
                     {}, 2, AccumulationRule.MULTIPLICATIVE, log)
    log.close()
    node = next(iter(graph.nodes.values()))
    assert node.uncertainty == pytest.approx(0.2)  # 0.5 * 0.4


def test_apply_mutations_edge_upserts_missing_endpoints(tmp_path):
    graph = KnowledgeGraph()
    log = RunLog(tmp_path / "log.jsonl")
    muts = parse_mutations(json.dumps([
        {"op": "add_edge", "head": "Ganfeng Lithium", "relation": "supplies",
         "tail": "Tesla", "support": ["t1-a1"]},
    ]), "t1-a9")
    _apply_mutations(graph, [coding_result(muts)],
                     {"t1-a1": ActionUncertainty("t1-a1", 0.25, "consensus")},
                     {}, 1, AccumulationRule.MULTIPLICATIVE, log)
    log.close()
    assert len(graph.nodes) == 2 and len(graph.edges) == 1
    edge = next(iter(graph.edges.values()))
    assert edge.uncertainty == pytest.approx(0.25)


def test_apply_mutations_unknown_support_is_skipped_not_fatal(tmp_path):
    graph = KnowledgeGraph()
    log = RunLog(tmp_path / "log.jsonl")
    muts = parse_mutations(json.dumps([
        {"op": "add_entity", "label": "Good", "support": ["t1-a1"]},
        {"op": "add_entity", "label": "Orphan", "support": ["ghost"]},
    ]), "t1-a9")
    _apply_mutations(graph, [coding_result(muts)],
                     {"t1-a1": ActionUncertainty("t1-a1", 0.5, "consensus")},
                     {}, 1, AccumulationRule.MULTIPLICATIVE, log)
    log.close()
    labels = {n.label for n in graph.nodes.values()}
    assert labels == {"Good"}
    rejected = [json.loads(line) for line in
                (tmp_path / "log.jsonl").read_text().splitlines()
                if json.loads(line)["event"] == "mutation-rejected"]
    assert len(rejected) == 1
