"""Prompt templates for the planner and worker agents.

Placeholders use {{NAME}} substitution. The version tag is echoed into run
logs so recorded runs can be tied to the exact templates that produced them.
"""

PROMPT_VERSION = "helicase-prompts/1"


def render(template: str, **values: str) -> str:
    out = template
    for key, value in values.items():
        out = out.replace("{{" + key + "}}", str(value))
    return out


DECOMPOSE = """You are the planner of a supply-chain investigation system.
Decompose the query below into an initial set of concrete investigation actions.

Query: {{QUERY}}

Reply with a JSON array only. Each element must be an object with:
  "description": the search or reasoning task text,
  "agent_type": one of "web_search", "reasoning", "coding",
  "target_concept": optional entity name the action targets.
"""

FORMAT_REMINDER = """
Your previous reply could not be parsed. Reply with ONLY a JSON array of
objects with keys "description", "agent_type" and optional "target_concept".
"""

CANDIDATES = """You are the planner of a supply-chain investigation system.
Iteration: {{ITERATION}}
Original query: {{QUERY}}

Knowledge graph summary (facts with uncertainty):
{{KG_SUMMARY}}

High-uncertainty facts needing verification:
{{HIGH_U_FACTS}}

Prior action history (with redundancy flags):
{{HISTORY}}

Previous trajectory redundancy signal: {{TRAJECTORY_U}}

Propose the next candidate actions targeting the highest-uncertainty parts of
the graph while avoiding redundant directions. Reply with a JSON array only,
elements: {"description": ..., "agent_type": "web_search"|"reasoning"|"coding",
"target_concept": optional}.
An empty array means the investigation is exhausted.
"""

DIFFICULTY = """Rate how many parallel web searches (an integer between
{{N_MIN}} and {{N_MAX}}) are warranted to resolve this task, considering its
difficulty and how uncertain the target concept currently is.

Task: {{DESCRIPTION}}
Target concept uncertainty: {{TARGET_U}}

Reply with a single integer.
"""

PARAPHRASE = """Produce {{N}} distinct search query variants for the task
below, each probing a different angle or source type. Reply with a JSON array
of {{N}} strings only.

Task: {{DESCRIPTION}}
"""

SYNTHESIZE = """Answer the investigation task using only the retrieved pages
below. Cite sources. Reply with a JSON object {"answer": ..., "sources": [urls]}.

Task: {{DESCRIPTION}}
Search query: {{QUERY}}

Retrieved pages:
{{PAGES}}
"""

MERGE = """Merge the following answers to the same task into a single
consolidated answer, preserving citations.

Task: {{DESCRIPTION}}

Answers:
{{ANSWERS}}
"""

REASONING = """Synthesize the evidence below into a conclusion for the task.
Perform cross-source inference where the evidence chains together.

Task: {{DESCRIPTION}}

Evidence:
{{EVIDENCE}}
"""

MUTATIONS = """Translate the findings below into knowledge-graph mutations.
Reply with a JSON array only. Allowed elements:
  {"op": "add_entity", "label": ..., "node_type": ..., "support": [action ids]}
  {"op": "add_edge", "head": label, "relation": ..., "tail": label, "support": [action ids]}
  {"op": "mark_decomposed", "label": ...}
  {"op": "revise_note", "label": ..., "note": ...}
"support" lists the ids of the evidence actions backing the fact.

Task: {{DESCRIPTION}}

Findings:
{{FINDINGS}}
"""

CONSENSUS_JUDGE = """Assess the factual consensus of the numbered results for
this action. Consider whether they report identical facts, entities and
quantities (low uncertainty), partial overlap (moderate), or contradictions
(high). With a single result, assess its internal consistency.

Action: {{DESCRIPTION}}

Results:
{{RESULTS}}

Reply with a line of the form: UNCERTAINTY: <decimal in [0,1]>
"""

EXTRACT_ANSWER = """Answer the original query using the knowledge graph below.
State the answer directly and ground it in the listed facts.

Query: {{QUERY}}

Knowledge graph facts (with confidence = 1 - uncertainty):
{{FACTS}}
"""

EQUIVALENCE_JUDGE = """Are the following two items semantically equivalent
(same real-world referent, surface form may differ)?

A: {{A}}
B: {{B}}

Reply YES or NO on the first line, then a short rationale.
"""

SOURCE_JUDGE = """Given the answer and cited source domains below, decide
whether the sources are plausible and relevant for verifying the claim.

Answer: {{ANSWER}}
Cited domains: {{DOMAINS}}

Reply YES or NO on the first line, then a short rationale.
"""
