"""Quadrant metrics: semantic answer accuracy, set precision/recall/F1,
source discovery rate, entity/relation/graph F1 and uncertainty calibration
error. The judge is pluggable; the exact judge (normalized string equality)
makes every metric deterministic for tests."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence
from urllib.parse import urlparse

from . import prompts
from .kg import KnowledgeGraph, normalize_label, normalize_relation


@dataclass
class JudgeDecision:
    equivalent: bool
    rationale: str = ""


def _exact_norm(s: str) -> str:
    # Case/whitespace/trailing-punctuation insensitive, but no semantic
    # allowances: "Pilbara Minerals Ltd." stays distinct from "Pilbara
    # Minerals". Suffix handling is the semantic judge's job.
    return " ".join(s.lower().split()).strip(" .,;:!?")


class ExactJudge:
    """Deterministic: equivalent iff normalized strings are equal."""

    def equivalent(self, a: str, b: str) -> JudgeDecision:
        same = _exact_norm(a) == _exact_norm(b)
        return JudgeDecision(same, "normalized string comparison")

    def sources_plausible(self, answer: str, domains: Sequence[str],
                          accepted: Sequence[str]) -> bool:
        accepted_set = {d.lower() for d in accepted}
        return any(d.lower() in accepted_set for d in domains)


class ChatJudge:
    """Semantic matching via a chat provider."""

    def __init__(self, chat, model: str):
        self.chat = chat
        self.model = model

    def _ask(self, prompt: str) -> bool:
        reply = self.chat.complete([{"role": "user", "content": prompt}], self.model)
        return reply.strip().upper().startswith("YES")

    def equivalent(self, a: str, b: str) -> JudgeDecision:
        prompt = prompts.render(prompts.EQUIVALENCE_JUDGE, A=a, B=b)
        return JudgeDecision(self._ask(prompt), "chat judge")

    def sources_plausible(self, answer: str, domains: Sequence[str],
                          accepted: Sequence[str]) -> bool:
        prompt = prompts.render(
            prompts.SOURCE_JUDGE, ANSWER=answer, DOMAINS=", ".join(domains)
        )
        return self._ask(prompt)


@dataclass
class SetScore:
    precision: float
    recall: float
    f1: float
    matched_pairs: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class GraphScore:
    entity: SetScore
    relation: SetScore
    g_f1: float
    w_e: float = 0.6
    w_r: float = 0.4


@dataclass
class CalibrationReport:
    mean_confidence: float
    mean_correctness: float
    uce: float
    per_fact: list[tuple[str, float, int]] = field(default_factory=list)


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def set_f1(predicted: Sequence[str], reference: Sequence[str], judge) -> SetScore:
    """Greedy one-to-one matching in canonical (sorted) reference order; each
    reference item takes the first unmatched equivalent prediction. Both
    empty counts as a vacuous perfect score."""
    if not predicted and not reference:
        return SetScore(1.0, 1.0, 1.0)
    used = [False] * len(predicted)
    matched = []
    for ref in sorted(reference):
        for i, pred in enumerate(predicted):
            if used[i]:
                continue
            try:
                if judge.equivalent(pred, ref).equivalent:
                    used[i] = True
                    matched.append((pred, ref))
                    break
            except Exception:  # noqa: BLE001 - judge failure leaves pair unmatched
                continue
    m = len(matched)
    p = m / len(predicted) if predicted else 0.0
    r = m / len(reference) if reference else 0.0
    if not reference:
        # No reference items: recall is vacuously perfect, precision penalizes
        # spurious predictions.
        r = 1.0
    return SetScore(p, r, _f1(p, r), matched)


def _graph_triples(graph: KnowledgeGraph) -> list[tuple[str, str, str]]:
    return [
        (graph.nodes[e.head].label, e.relation, graph.nodes[e.tail].label)
        for e in graph.edges.values()
    ]


def graph_f1(
    predicted: KnowledgeGraph,
    reference: KnowledgeGraph,
    judge,
    w_e: float = 0.6,
    w_r: float = 0.4,
) -> GraphScore:
    """Entity-level set F1 over labels plus relation-level triple matching: a
    predicted triple is a true positive only when head, relation and tail are
    each judged equivalent to a reference triple's parts."""
    if w_e < 0 or w_r < 0 or abs(w_e + w_r - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative and sum to 1")
    pred_entities = sorted(n.label for n in predicted.nodes.values())
    ref_entities = sorted(n.label for n in reference.nodes.values())
    entity_score = set_f1(pred_entities, ref_entities, judge)

    pred_triples = sorted(_graph_triples(predicted))
    ref_triples = sorted(_graph_triples(reference))
    used = [False] * len(pred_triples)
    matched = []
    for rh, rr, rt in ref_triples:
        for i, (ph, pr, pt) in enumerate(pred_triples):
            if used[i]:
                continue
            try:
                ok = (
                    judge.equivalent(ph, rh).equivalent
                    and judge.equivalent(pt, rt).equivalent
                    and (
                        normalize_relation(pr) == normalize_relation(rr)
                        or judge.equivalent(pr, rr).equivalent
                    )
                )
            except Exception:  # noqa: BLE001
                ok = False
            if ok:
                used[i] = True
                matched.append((f"{ph}|{pr}|{pt}", f"{rh}|{rr}|{rt}"))
                break
    m = len(matched)
    if not pred_triples and not ref_triples:
        relation_score = SetScore(1.0, 1.0, 1.0)
    else:
        p = m / len(pred_triples) if pred_triples else 0.0
        r = m / len(ref_triples) if ref_triples else 1.0
        relation_score = SetScore(p, r, _f1(p, r), matched)

    g = w_e * entity_score.f1 + w_r * relation_score.f1
    return GraphScore(entity_score, relation_score, g, w_e, w_r)


def uce(facts: Sequence[tuple[float, int]],
        texts: Optional[Sequence[str]] = None) -> CalibrationReport:
    """Uncertainty calibration error: absolute gap between mean stated
    confidence and mean empirical correctness."""
    if not facts:
        raise ValueError("UCE is undefined for an empty fact list")
    for c, a in facts:
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"confidence {c} outside [0, 1]")
        if a not in (0, 1):
            raise ValueError(f"correctness {a} must be 0 or 1")
    mean_c = sum(c for c, _ in facts) / len(facts)
    mean_a = sum(a for _, a in facts) / len(facts)
    per_fact = [
        ((texts[i] if texts else f"fact-{i}"), c, a)
        for i, (c, a) in enumerate(facts)
    ]
    return CalibrationReport(mean_c, mean_a, abs(mean_c - mean_a), per_fact)


def _domain(url: str) -> Optional[str]:
    try:
        netloc = urlparse(url).netloc
        return netloc.lower() or None
    except ValueError:
        return None


def sdr(cited_sources: Sequence[str], answer: str,
        accepted_domains: Sequence[str], judge) -> int:
    """Source discovery: 1 iff at least one cited source plausibly verifies
    the answer. No citations scores 0."""
    domains = [d for d in (_domain(u) for u in cited_sources) if d]
    if not domains:
        return 0
    return 1 if judge.sources_plausible(answer, domains, accepted_domains) else 0


_YES_RE = re.compile(r"\b(yes|true|correct|it does|confirmed)\b", re.IGNORECASE)
_NO_RE = re.compile(r"\b(no|false|incorrect|it does not|does not)\b", re.IGNORECASE)
_REFUSAL_RE = re.compile(
    r"\b(i (do not|don't) know|cannot determine|unable to answer|no idea)\b",
    re.IGNORECASE,
)


def q1_accuracy(predicted: str, reference: str, answer_kind: str,
                judge) -> tuple[int, bool]:
    """Single-answer accuracy; returns (score, abstained). Refusals score 0
    but are flagged separately so abstention can be told apart from error."""
    if _REFUSAL_RE.search(predicted):
        return 0, True
    if answer_kind == "boolean":
        ref_yes = normalize_label(reference) in ("yes", "true")
        if _NO_RE.search(predicted):
            pred_yes = False
        elif _YES_RE.search(predicted):
            pred_yes = True
        else:
            return 0, False
        return int(pred_yes == ref_yes), False
    return int(judge.equivalent(predicted, reference).equivalent), False


# ---------------------------------------------------------------------------
# File-level evaluation (prediction vs reference JSON documents)
# ---------------------------------------------------------------------------


def _graph_from_doc(doc: dict) -> KnowledgeGraph:
    from .kg import EvidenceRef

    graph = KnowledgeGraph()
    for label in doc.get("entities", []):
        graph.upsert_entity(label, "entity", EvidenceRef("ref", 0, 0.0))
    for h, r, t in doc.get("triples", []):
        hid = graph.resolve_entity(h) or graph.upsert_entity(
            h, "entity", EvidenceRef("ref", 0, 0.0)
        )[0]
        tid = graph.resolve_entity(t) or graph.upsert_entity(
            t, "entity", EvidenceRef("ref", 0, 0.0)
        )[0]
        if isinstance(hid, tuple):
            hid = hid[0]
        if isinstance(tid, tuple):
            tid = tid[0]
        graph.add_edge(hid, r, tid, EvidenceRef("ref", 0, 0.0))
    return graph


def evaluate_files(pred_docs: Sequence[dict], ref_docs: Sequence[dict],
                   judge) -> dict:
    """Evaluate per-query prediction documents against references, grouped by
    quadrant. Returns a JSON-serializable report."""
    refs = {d["id"]: d for d in ref_docs}
    rows = []
    for pred in pred_docs:
        ref = refs.get(pred["id"])
        if ref is None:
            continue
        quadrant = ref["quadrant"]
        row = {"id": pred["id"], "quadrant": quadrant}
        if quadrant == "q1":
            score, abstained = q1_accuracy(
                pred.get("answer", ""), ref["answer"],
                ref.get("answer_kind", "entity"), judge,
            )
            row.update(accuracy=score, abstained=abstained)
        elif quadrant == "q2":
            s = set_f1(pred.get("items", []), ref.get("items", []), judge)
            row.update(precision=s.precision, recall=s.recall, f1=s.f1)
        elif quadrant == "q3":
            score, abstained = q1_accuracy(
                pred.get("answer", ""), ref["answer"],
                ref.get("answer_kind", "entity"), judge,
            )
            row.update(
                accuracy=score,
                abstained=abstained,
                sdr=sdr(pred.get("sources", []), pred.get("answer", ""),
                        ref.get("accepted_domains", []), judge),
            )
        elif quadrant == "q4":
            gs = graph_f1(_graph_from_doc(pred.get("graph", {})),
                          _graph_from_doc(ref.get("graph", {})), judge)
            row.update(e_f1=gs.entity.f1, r_f1=gs.relation.f1, g_f1=gs.g_f1)
            confidences = pred.get("fact_confidences", [])
            if confidences:
                pairs = [(fc["confidence"], int(fc["correct"]))
                         for fc in confidences]
                row["uce"] = uce(pairs).uce
        rows.append(row)

    def mean_of(key: str, quadrant: str) -> Optional[float]:
        vals = [r[key] for r in rows if r["quadrant"] == quadrant and key in r]
        return sum(vals) / len(vals) if vals else None

    summary = {
        "q1_accuracy": mean_of("accuracy", "q1"),
        "q2_precision": mean_of("precision", "q2"),
        "q2_recall": mean_of("recall", "q2"),
        "q2_f1": mean_of("f1", "q2"),
        "q3_accuracy": mean_of("accuracy", "q3"),
        "q3_sdr": mean_of("sdr", "q3"),
        "q4_e_f1": mean_of("e_f1", "q4"),
        "q4_r_f1": mean_of("r_f1", "q4"),
        "q4_g_f1": mean_of("g_f1", "q4"),
        "q4_uce": mean_of("uce", "q4"),
    }
    return {"per_query": rows, "summary": summary}


def format_report_table(report: dict) -> str:
    """Aligned text table over the summary values."""
    s = report["summary"]

    def fmt(v):
        return f"{v:.3f}" if v is not None else "--"

    header = ("Q1 Acc", "Q2 P", "Q2 R", "Q2 F1", "Q3 Acc", "Q3 SDR",
              "E-F1", "R-F1", "G-F1", "UCE")
    values = (s["q1_accuracy"], s["q2_precision"], s["q2_recall"], s["q2_f1"],
              s["q3_accuracy"], s["q3_sdr"], s["q4_e_f1"], s["q4_r_f1"],
              s["q4_g_f1"], s["q4_uce"])
    head = " | ".join(f"{h:>7}" for h in header)
    line = " | ".join(f"{fmt(v):>7}" for v in values)
    return head + "\n" + "-" * len(head) + "\n" + line


def load_json_lines_or_array(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read().strip()
    if text.startswith("["):
        return json.loads(text)
    return [json.loads(line) for line in text.splitlines() if line.strip()]
