"""Uncertainty-annotated knowledge graph store.

Nodes and edges each carry a fact-level uncertainty in [0, 1], evidence
provenance back to the actions that produced them, and a decomposition flag
that excludes structural grouping nodes from the active leaf set.

Snapshots are canonical JSON: sorted keys, uncertainties serialized as fixed
6-decimal strings, so equal graphs always produce identical bytes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

__all__ = [
    "EvidenceRef",
    "EntityNode",
    "RelationEdge",
    "Fact",
    "KnowledgeGraph",
    "KGError",
    "SnapshotError",
    "normalize_label",
    "normalize_relation",
]

# Corporate suffixes dropped during label normalization.
_CORP_SUFFIXES = {"ltd", "inc", "co", "corp"}

_WS_RE = re.compile(r"\s+")


class KGError(ValueError):
    """Rejected graph operation (bad label, dangling endpoint, bad evidence)."""


class SnapshotError(ValueError):
    """Malformed snapshot stream. Carries a byte position when known."""

    def __init__(self, message: str, position: Optional[int] = None):
        super().__init__(message)
        self.position = position


def normalize_label(label: str) -> str:
    """Canonical form used for entity identity and containment matching.

    Lowercase, trim, collapse whitespace, strip trailing punctuation and
    corporate suffixes (ltd/inc/co/corp, with or without periods).
    """
    s = _WS_RE.sub(" ", label.strip().lower())
    s = s.strip(" .,;:!?")
    tokens = s.split(" ")
    while tokens and tokens[-1].rstrip(".") in _CORP_SUFFIXES:
        tokens.pop()
    return " ".join(tokens).strip(" .,;:!?")


def normalize_relation(relation: str) -> str:
    return _WS_RE.sub(" ", relation.strip().lower())


@dataclass
class EvidenceRef:
    action_id: str
    iteration: int
    action_uncertainty: float
    source_urls: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not 0.0 <= self.action_uncertainty <= 1.0:
            raise KGError(
                f"evidence action_uncertainty {self.action_uncertainty} outside [0, 1]"
            )


@dataclass
class EntityNode:
    id: str
    label: str
    aliases: set[str] = field(default_factory=set)
    node_type: str = "entity"
    uncertainty: float = 1.0
    decomposed: bool = False
    created_iteration: int = 0
    evidence: list[EvidenceRef] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


@dataclass
class RelationEdge:
    id: str
    head: str
    relation: str
    tail: str
    uncertainty: float = 1.0
    created_iteration: int = 0
    evidence: list[EvidenceRef] = field(default_factory=list)


@dataclass(frozen=True)
class Fact:
    """A node or edge viewed as a fact with uncertainty U(f)."""

    kind: str  # "entity" | "relation"
    ref_id: str
    uncertainty: float


class KnowledgeGraph:
    """The evolving graph G^(t). One writer at a time; readers between mutations."""

    def __init__(self, allow_self_loops: bool = False):
        self.nodes: dict[str, EntityNode] = {}
        self.edges: dict[str, RelationEdge] = {}
        self.allow_self_loops = allow_self_loops
        self._entity_index: dict[str, str] = {}  # normalized label -> node id
        self._edge_index: dict[tuple[str, str, str], str] = {}
        self._next_node = 1
        self._next_edge = 1

    # -- entities ----------------------------------------------------------

    def upsert_entity(
        self,
        label: str,
        node_type: str,
        evidence: EvidenceRef,
        semantic_matcher: Optional[Callable[[str, str], bool]] = None,
    ) -> tuple[str, str]:
        """Insert or merge an entity; returns (node id, "created"|"merged").

        Merging is containment on normalized labels first, then the optional
        semantic matcher as a second stage.
        """
        evidence.validate()
        norm = normalize_label(label)
        if not norm:
            raise KGError(f"entity label {label!r} is empty after normalization")

        match_id = self._find_match(norm, semantic_matcher, label)
        if match_id is not None:
            node = self.nodes[match_id]
            if label != node.label and label not in node.aliases:
                node.aliases.add(label)
            node.evidence.append(evidence)
            return match_id, "merged"

        node_id = f"e{self._next_node}"
        self._next_node += 1
        node = EntityNode(
            id=node_id,
            label=label,
            node_type=node_type,
            uncertainty=evidence.action_uncertainty,
            created_iteration=evidence.iteration,
            evidence=[evidence],
        )
        self.nodes[node_id] = node
        self._entity_index[norm] = node_id
        return node_id, "created"

    def _find_match(
        self,
        norm: str,
        semantic_matcher: Optional[Callable[[str, str], bool]],
        raw_label: str,
    ) -> Optional[str]:
        if norm in self._entity_index:
            return self._entity_index[norm]
        for existing_norm, node_id in self._entity_index.items():
            if norm in existing_norm or existing_norm in norm:
                return node_id
        if semantic_matcher is not None:
            for node_id, node in sorted(self.nodes.items()):
                if semantic_matcher(raw_label, node.label):
                    return node_id
        return None

    def find_entity(self, label: str) -> Optional[str]:
        """Lookup by normalized label or alias; no containment, no mutation."""
        norm = normalize_label(label)
        if norm in self._entity_index:
            return self._entity_index[norm]
        for node_id, node in self.nodes.items():
            if any(normalize_label(a) == norm for a in node.aliases):
                return node_id
        return None

    def resolve_entity(self, label: str) -> Optional[str]:
        """Lookup with the same containment rule upsert uses."""
        norm = normalize_label(label)
        if not norm:
            return None
        return self._find_match(norm, None, label)

    def mark_decomposed(self, node_id: str) -> None:
        node = self._require_node(node_id)
        node.decomposed = True

    # -- edges -------------------------------------------------------------

    def add_edge(
        self, head: str, relation: str, tail: str, evidence: EvidenceRef
    ) -> str:
        evidence.validate()
        rel_norm = normalize_relation(relation)
        if not rel_norm:
            raise KGError("edge relation is empty")
        for endpoint in (head, tail):
            if endpoint not in self.nodes:
                raise KGError(f"dangling endpoint: no node with id {endpoint!r}")
        if head == tail and not self.allow_self_loops:
            raise KGError(f"self-loop on {head!r} rejected")

        key = (head, rel_norm, tail)
        if key in self._edge_index:
            edge = self.edges[self._edge_index[key]]
            edge.evidence.append(evidence)
            return edge.id

        edge_id = f"r{self._next_edge}"
        self._next_edge += 1
        edge = RelationEdge(
            id=edge_id,
            head=head,
            relation=relation,
            tail=tail,
            uncertainty=evidence.action_uncertainty,
            created_iteration=evidence.iteration,
            evidence=[evidence],
        )
        self.edges[edge_id] = edge
        self._edge_index[key] = edge_id
        return edge_id

    # -- fact views ---------------------------------------------------------

    def active_leaves(self) -> set[str]:
        """Non-decomposed entity ids (V_active)."""
        return {nid for nid, node in self.nodes.items() if not node.decomposed}

    def facts_of(self, node_id: str) -> set[Fact]:
        """The node's own fact plus every incident edge's fact (F(v))."""
        node = self._require_node(node_id)
        facts = {Fact("entity", node.id, node.uncertainty)}
        for edge in self.edges.values():
            if edge.head == node_id or edge.tail == node_id:
                facts.add(Fact("relation", edge.id, edge.uncertainty))
        return facts

    def all_facts(self) -> list[Fact]:
        facts = [Fact("entity", n.id, n.uncertainty) for n in self.nodes.values()]
        facts += [Fact("relation", e.id, e.uncertainty) for e in self.edges.values()]
        return facts

    def fact_text(self, fact: Fact) -> str:
        if fact.kind == "entity":
            return self.nodes[fact.ref_id].label
        edge = self.edges[fact.ref_id]
        head = self.nodes[edge.head].label
        tail = self.nodes[edge.tail].label
        return f"{head} --{edge.relation}--> {tail}"

    def high_uncertainty_facts(self, tau_high: float) -> set[Fact]:
        """Facts with U(f) strictly above tau_high (F_high)."""
        if not 0.0 <= tau_high <= 1.0:
            raise KGError(f"tau_high {tau_high} outside [0, 1]")
        return {f for f in self.all_facts() if f.uncertainty > tau_high}

    def set_fact_uncertainty(self, fact_kind: str, ref_id: str, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise KGError(f"uncertainty {value} outside [0, 1]")
        if fact_kind == "entity":
            self._require_node(ref_id).uncertainty = value
        else:
            self.edges[ref_id].uncertainty = value

    def fact_uncertainty(self, fact_kind: str, ref_id: str) -> float:
        if fact_kind == "entity":
            return self._require_node(ref_id).uncertainty
        return self.edges[ref_id].uncertainty

    def _require_node(self, node_id: str) -> EntityNode:
        if node_id not in self.nodes:
            raise KGError(f"unknown entity id {node_id!r}")
        return self.nodes[node_id]

    # -- persistence ---------------------------------------------------------

    def snapshot(self) -> bytes:
        """Canonical byte serialization: equal graphs yield identical bytes."""
        doc = {
            "meta": {
                "edge_count": len(self.edges),
                "node_count": len(self.nodes),
                "next_edge": self._next_edge,
                "next_node": self._next_node,
                "allow_self_loops": self.allow_self_loops,
            },
            "nodes": [
                _node_doc(self.nodes[nid]) for nid in sorted(self.nodes, key=_id_key)
            ],
            "edges": [
                _edge_doc(self.edges[eid]) for eid in sorted(self.edges, key=_id_key)
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def load(cls, stream: bytes) -> "KnowledgeGraph":
        try:
            doc = json.loads(stream.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            pos = getattr(exc, "pos", None)
            raise SnapshotError(f"malformed snapshot: {exc}", position=pos) from exc
        if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
            raise SnapshotError("malformed snapshot: missing nodes/edges sections")
        graph = cls(allow_self_loops=doc.get("meta", {}).get("allow_self_loops", False))
        for nd in doc["nodes"]:
            node = EntityNode(
                id=nd["id"],
                label=nd["label"],
                aliases=set(nd["aliases"]),
                node_type=nd["node_type"],
                uncertainty=float(nd["uncertainty"]),
                decomposed=nd["decomposed"],
                created_iteration=nd["created_iteration"],
                evidence=[_evidence_from(e) for e in nd["evidence"]],
                notes=list(nd.get("notes", [])),
            )
            graph.nodes[node.id] = node
            graph._entity_index[normalize_label(node.label)] = node.id
        for ed in doc["edges"]:
            edge = RelationEdge(
                id=ed["id"],
                head=ed["head"],
                relation=ed["relation"],
                tail=ed["tail"],
                uncertainty=float(ed["uncertainty"]),
                created_iteration=ed["created_iteration"],
                evidence=[_evidence_from(e) for e in ed["evidence"]],
            )
            if edge.head not in graph.nodes or edge.tail not in graph.nodes:
                raise SnapshotError(f"edge {edge.id} has a dangling endpoint")
            graph.edges[edge.id] = edge
            graph._edge_index[
                (edge.head, normalize_relation(edge.relation), edge.tail)
            ] = edge.id
        meta = doc.get("meta", {})
        graph._next_node = meta.get("next_node", len(graph.nodes) + 1)
        graph._next_edge = meta.get("next_edge", len(graph.edges) + 1)
        return graph

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.snapshot() == other.snapshot()


def _id_key(identifier: str) -> tuple[str, int]:
    # e1 < e2 < e10: numeric ordering on the sequential part.
    m = re.match(r"([a-z]+)(\d+)$", identifier)
    if m:
        return (m.group(1), int(m.group(2)))
    return (identifier, 0)


def _u6(value: float) -> str:
    return f"{value:.6f}"


def _evidence_doc(ev: EvidenceRef) -> dict:
    return {
        "action_id": ev.action_id,
        "iteration": ev.iteration,
        "action_uncertainty": _u6(ev.action_uncertainty),
        "source_urls": sorted(ev.source_urls),
    }


def _evidence_from(doc: dict) -> EvidenceRef:
    return EvidenceRef(
        action_id=doc["action_id"],
        iteration=doc["iteration"],
        action_uncertainty=float(doc["action_uncertainty"]),
        source_urls=list(doc["source_urls"]),
    )


def _node_doc(node: EntityNode) -> dict:
    return {
        "id": node.id,
        "label": node.label,
        "aliases": sorted(node.aliases),
        "node_type": node.node_type,
        "uncertainty": _u6(node.uncertainty),
        "decomposed": node.decomposed,
        "created_iteration": node.created_iteration,
        "evidence": [_evidence_doc(e) for e in node.evidence],
        "notes": list(node.notes),
    }


def _edge_doc(edge: RelationEdge) -> dict:
    return {
        "id": edge.id,
        "head": edge.head,
        "relation": edge.relation,
        "tail": edge.tail,
        "uncertainty": _u6(edge.uncertainty),
        "created_iteration": edge.created_iteration,
        "evidence": [_evidence_doc(e) for e in edge.evidence],
    }
