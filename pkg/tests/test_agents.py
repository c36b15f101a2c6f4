"""Worker agents: web search fan-out, reasoning, mutation extraction,
parallel execution contracts."""

import json

import pytest

from helicase.agents import (
    ActionResult,
    MutationParseError,
    execute_coding,
    execute_reasoning,
    execute_web_search,
    parse_mutations,
    run_actions_parallel,
)
from helicase.planner import Action
from helicase.providers import HashingEmbedder, PairwiseConsensusJudge, ProviderSuite
from helicase.uncertainty import ActionUncertainty


def act(desc, agent_type="web_search", aid="t1-a1"):
    return Action(id=aid, description=desc, agent_type=agent_type)


class ScriptChat:
    """Replies keyed on prompt markers; unknown prompts raise."""

    def __init__(self, table=None, default=None):
        self.table = table or {}
        self.default = default
        self.prompts = []

    def complete(self, messages, model):
        text = messages[0]["content"]
        self.prompts.append(text)
        for marker, reply in self.table.items():
            if marker in text:
                return reply(text) if callable(reply) else reply
        if self.default is not None:
            return self.default
        raise AssertionError(f"no scripted reply for: {text[:80]}")


class StubSearch:
    def __init__(self, fail_queries=()):
        self.fail = set(fail_queries)

    def search(self, query):
        if query in self.fail:
            raise RuntimeError("search backend down")
        return [{"title": query, "url": f"https://src.example/{abs(hash(query)) % 97}",
                 "snippet": "snippet"}]


class StubReader:
    def read(self, url):
        return {"text": f"page at {url}", "modality": "html"}


def suite(chat, search=None, judge=None):
    return ProviderSuite(
        chat=chat, search=search or StubSearch(), reader=StubReader(),
        embedder=HashingEmbedder(), judge=judge or PairwiseConsensusJudge(),
    )


def synth_reply(answer):
    return json.dumps({"answer": answer, "sources": ["https://cited.example/a"]})


# -- web search ---------------------------------------------------------------


def test_web_search_n3_agreement():
    chat = ScriptChat({
        "search query variants": json.dumps(["v one", "v two", "v three"]),
        "Answer the investigation task": synth_reply("Lamb Weston"),
        "Merge the following answers": "Lamb Weston",
    })
    result = execute_web_search(act("find the supplier"), 3, suite(chat), "m")
    assert result.uncertainty.value == 0.0
    assert result.answer_text == "Lamb Weston"
    assert len(result.raw_results) == 3


def test_web_search_n1_single_result():
    chat = ScriptChat({"Answer the investigation task": synth_reply("one answer")})
    result = execute_web_search(act("simple lookup"), 1, suite(chat), "m")
    assert len(result.raw_results) == 1
    assert result.uncertainty.value == 0.0  # single result scores 0 under mock
    assert result.evidence_urls == ["https://cited.example/a"]


def test_web_search_two_vs_one_disagreement():
    answers = iter(["Lamb Weston", "Lamb Weston", "McCain"])
    chat = ScriptChat({
        "search query variants": json.dumps(["q1", "q2", "q3"]),
        "Answer the investigation task": lambda text: synth_reply(next(answers)),
        "Merge the following answers": "Lamb Weston (majority)",
    })
    result = execute_web_search(act("who supplies fries"), 3, suite(chat), "m")
    assert result.uncertainty.value == pytest.approx(1 - 1 / 3, abs=1e-6)


def test_web_search_partial_variant_failure():
    chat = ScriptChat({
        "search query variants": json.dumps(["good query", "dead query"]),
        "Answer the investigation task": synth_reply("answer"),
        "Merge the following answers": "answer",
    })
    s = suite(chat, search=StubSearch(fail_queries={"dead query"}))
    result = execute_web_search(act("task"), 2, s, "m")
    assert result.error is None
    assert len(result.raw_results) == 1


def test_web_search_total_failure_is_error_result():
    chat = ScriptChat({"search query variants": json.dumps(["q1"])})
    s = suite(chat, search=StubSearch(fail_queries={"q1"}))
    result = execute_web_search(act("task"), 2, s, "m")
    assert result.error is not None
    assert result.uncertainty.value == 1.0


def test_web_search_paraphrase_fallback_suffixes():
    chat = ScriptChat({
        "search query variants": "not json at all",
        "Answer the investigation task": synth_reply("x"),
        "Merge the following answers": "x",
    })
    result = execute_web_search(act("base task"), 3, suite(chat), "m")
    assert len(result.raw_results) == 3  # description + keyword suffixes


def test_web_search_unstructured_synthesis_falls_back_to_raw_text():
    chat = ScriptChat({"Answer the investigation task": "plain prose answer"})
    result = execute_web_search(act("task"), 1, suite(chat), "m")
    assert result.answer_text == "plain prose answer"
    assert result.evidence_urls  # page urls substituted for missing citations


def test_web_search_validates_inputs():
    with pytest.raises(ValueError):
        execute_web_search(act("t"), 0, suite(ScriptChat()), "m")
    with pytest.raises(ValueError):
        execute_web_search(act("t", "coding"), 1, suite(ScriptChat()), "m")


# -- reasoning ----------------------------------------------------------------


def evidence_result(aid, text, urls=()):
    return ActionResult(
        action_id=aid, agent_type="web_search", answer_text=text,
        uncertainty=ActionUncertainty(aid, 0.2, "consensus"),
        evidence_urls=list(urls),
    )


def test_reasoning_chains_evidence():
    chat = ScriptChat({
        "Synthesize the evidence below":
            "Pilbara supplies Ganfeng and Ganfeng supplies Tesla, so the chain holds.",
    })
    ev = [evidence_result("t0-a1", "Pilbara supplies Ganfeng"),
          evidence_result("t0-a2", "Ganfeng supplies Tesla",
                          urls=["https://a.example/1"])]
    result = execute_reasoning(act("infer the chain", "reasoning"), ev,
                               suite(chat), "m")
    assert "Pilbara" in result.answer_text and "Tesla" in result.answer_text
    assert result.evidence_urls == ["https://a.example/1"]
    assert result.uncertainty.value == 0.0


def test_reasoning_empty_evidence():
    chat = ScriptChat({"Synthesize the evidence below": "insufficient evidence"})

    class HighJudge:
        def assess(self, description, results):
            return "UNCERTAINTY: 0.95"

    result = execute_reasoning(act("infer", "reasoning"), [],
                               suite(chat, judge=HighJudge()), "m")
    assert result.answer_text == "insufficient evidence"
    assert result.uncertainty.value == 0.95
    assert "(no evidence gathered yet)" in chat.prompts[0]


def test_reasoning_determinism():
    def make():
        chat = ScriptChat({"Synthesize the evidence below": "same conclusion"})
        ev = [evidence_result("t0-a1", "fact")]
        return execute_reasoning(act("infer", "reasoning"), ev, suite(chat), "m")

    assert make().answer_text == make().answer_text


def test_reasoning_chat_failure_is_error_result():
    class DeadChat:
        def complete(self, messages, model):
            raise RuntimeError("provider down")

    result = execute_reasoning(act("infer", "reasoning"), [], suite(DeadChat()), "m")
    assert result.error is not None
    assert result.uncertainty.value == 1.0


# -- mutation parsing and coding ------------------------------------------------


def test_parse_mutations_valid():
    reply = json.dumps([
        {"op": "add_entity", "label": "Tesla", "node_type": "oem",
         "support": ["t0-a1"]},
        {"op": "add_entity", "label": "Ganfeng", "support": ["t0-a1", "t0-a2"]},
        {"op": "add_edge", "head": "Ganfeng", "relation": "supplies",
         "tail": "Tesla", "support": ["t0-a2"]},
    ])
    muts = parse_mutations(reply, "t1-c1")
    assert [m.op for m in muts] == ["add_entity", "add_entity", "add_edge"]
    assert muts[1].node_type == "entity"  # default
    assert muts[2].support == ["t0-a2"]


def test_parse_mutations_names_offending_index():
    reply = json.dumps([
        {"op": "add_entity", "label": "ok", "support": ["a"]},
        {"op": "add_edge", "head": "x", "tail": "y", "support": ["a"]},
    ])
    with pytest.raises(MutationParseError, match="element 1"):
        parse_mutations(reply, "c")


def test_parse_mutations_rejects_non_array_and_unknown_op():
    with pytest.raises(MutationParseError):
        parse_mutations("{}", "c")
    with pytest.raises(MutationParseError, match="unknown op"):
        parse_mutations(json.dumps([{"op": "drop_table"}]), "c")
    with pytest.raises(MutationParseError):
        parse_mutations("not json", "c")


def test_coding_success_binary_zero():
    reply = json.dumps([
        {"op": "add_entity", "label": "A", "support": ["t0-a1"]},
        {"op": "add_entity", "label": "B", "support": ["t0-a1"]},
        {"op": "add_edge", "head": "A", "relation": "r", "tail": "B",
         "support": ["t0-a1"]},
    ])
    chat = ScriptChat({"Translate the findings below": reply})
    result = execute_coding(act("extract", "coding"), [], suite(chat), "m")
    assert len(result.mutations) == 3
    assert (result.uncertainty.value, result.uncertainty.method) == (0.0, "binary")


def test_coding_empty_array_is_legal_noop():
    chat = ScriptChat({"Translate the findings below": "[]"})
    result = execute_coding(act("extract", "coding"), [], suite(chat), "m")
    assert result.mutations == []
    assert result.uncertainty.value == 0.0


def test_coding_malformed_twice_binary_one():
    chat = ScriptChat({"Translate the findings below": "not json"})
    result = execute_coding(act("extract", "coding"), [], suite(chat), "m")
    assert result.mutations == []
    assert (result.uncertainty.value, result.uncertainty.method) == (1.0, "binary")
    assert len(chat.prompts) == 2
    assert "could not be parsed" in chat.prompts[1]


def test_coding_retry_recovers():
    replies = iter(["garbage", json.dumps(
        [{"op": "add_entity", "label": "A", "support": ["t0-a1"]}]
    )])
    chat = ScriptChat({"Translate the findings below": lambda t: next(replies)})
    result = execute_coding(act("extract", "coding"), [], suite(chat), "m")
    assert len(result.mutations) == 1
    assert result.uncertainty.value == 0.0


def test_coding_sees_findings_with_uncertainty():
    chat = ScriptChat({"Translate the findings below": "[]"})
    findings = [evidence_result("t0-a1", "Ganfeng supplies Tesla")]
    execute_coding(act("extract", "coding"), findings, suite(chat), "m")
    assert "Ganfeng supplies Tesla" in chat.prompts[0]
    assert "U=0.2000" in chat.prompts[0]


# -- parallel execution -----------------------------------------------------------


def make_batch_suite(answer="shared answer"):
    reply = json.dumps([{"op": "add_entity", "label": "X", "support": ["t1-a1"]}])
    chat = ScriptChat({
        "Answer the investigation task": synth_reply(answer),
        "Synthesize the evidence below": "reasoned conclusion",
        "Translate the findings below": reply,
    })
    return suite(chat), chat


def test_parallel_coding_observes_all_findings():
    s, chat = make_batch_suite()
    actions = [act(f"search {i}", aid=f"t1-a{i}") for i in range(1, 4)]
    actions.append(act("extract facts", "coding", aid="t1-a4"))
    results = run_actions_parallel(
        actions, s, n_for={a.id: 1 for a in actions}, models={
            "web_search": "m", "reasoning": "m", "coding": "m"},
    )
    coding_prompt = next(p for p in chat.prompts if "Translate the findings" in p)
    for i in range(1, 4):
        assert f"[t1-a{i}]" in coding_prompt
    assert [r.action_id for r in results] == [a.id for a in actions]


def test_parallel_result_order_matches_input_order():
    s, _ = make_batch_suite()
    actions = [act(f"task number {i}", aid=f"t1-a{i}") for i in range(1, 9)]
    expected = [a.id for a in actions]
    for _ in range(100):
        results = run_actions_parallel(
            actions, s, n_for={a.id: 1 for a in actions},
            models={"web_search": "m", "reasoning": "m", "coding": "m"},
            concurrency=8,
        )
        assert [r.action_id for r in results] == expected


def test_parallel_isolation_one_failure_does_not_spread():
    reply = json.dumps([{"op": "add_entity", "label": "X", "support": ["t1-a1"]}])
    chat = ScriptChat({
        "Answer the investigation task": synth_reply("fine"),
        "Translate the findings below": reply,
    })
    s = suite(chat, search=StubSearch(fail_queries={"doomed task"}))
    actions = [act("healthy task", aid="t1-a1"), act("doomed task", aid="t1-a2"),
               act("extract", "coding", aid="t1-a3")]
    results = run_actions_parallel(
        actions, s, n_for={"t1-a1": 1, "t1-a2": 1},
        models={"web_search": "m", "reasoning": "m", "coding": "m"},
    )
    assert results[0].error is None
    assert results[1].error is not None and results[1].uncertainty.value == 1.0
    assert results[2].uncertainty.method == "binary"


def test_parallel_empty_batch_rejected():
    s, _ = make_batch_suite()
    with pytest.raises(ValueError):
        run_actions_parallel([], s, n_for={}, models={})


def test_reasoning_runs_on_prior_results_not_current():
    s, chat = make_batch_suite()
    prior = [evidence_result("t0-a1", "established earlier")]
    actions = [act("new search", aid="t2-a1"),
               act("reason about it", "reasoning", aid="t2-a2")]
    run_actions_parallel(
        actions, s, n_for={"t2-a1": 1},
        models={"web_search": "m", "reasoning": "m", "coding": "m"},
        prior_results=prior,
    )
    reasoning_prompt = next(p for p in chat.prompts if "Synthesize the evidence" in p)
    assert "established earlier" in reasoning_prompt
    assert "shared answer" not in reasoning_prompt
