"""Relation graphs marking one object-relation-object tuple to forget.

A graph holds the unsafe tuple as a single forget edge, safe reuses of the
same relation with neighbor objects, an alternate relation between the two
forget endpoints, and optionally neutral edges. Every downstream stage
(corpus synthesis, loss-role assignment, evaluation) reads its structure
from here.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class GraphError(ValueError):
    """Raised for unusable graph specs or malformed graph manifests."""


class NodeRole(str, Enum):
    FORGET_ENDPOINT = "forget-endpoint"
    PRESERVATION_NEIGHBOR = "preservation-neighbor"
    NEUTRAL = "neutral"


class EdgeLossRole(str, Enum):
    UNSAFE_FORGET = "unsafe-forget"
    SAFE_PULL = "safe-edge-pull"
    NEUTRAL_PULL = "neutral-pull"


def slugify(label: str) -> str:
    """Deterministic identifier fragment for a label ("Eiffel Tower" -> "eiffel-tower")."""
    slug = re.sub(r"[^a-z0-9]+", "-", label.lower()).strip("-")
    if not slug:
        raise GraphError(f"label {label!r} has no identifier characters")
    return slug


@dataclass(frozen=True)
class ObjectNode:
    id: str
    label: str
    role: NodeRole

    def __post_init__(self) -> None:
        if not self.label.strip():
            raise GraphError("node label must be non-empty")


@dataclass(frozen=True)
class RelationEdge:
    id: str
    relation: str
    subject_id: str
    object_id: str
    loss_role: EdgeLossRole

    def __post_init__(self) -> None:
        if not self.relation.strip():
            raise GraphError("relation label must be non-empty")
        if self.subject_id == self.object_id:
            raise GraphError(f"edge {self.id!r} is a self-loop on {self.subject_id!r}")

    def touches(self, node_id: str) -> bool:
        return node_id in (self.subject_id, self.object_id)


@dataclass(frozen=True)
class ForgetTuple:
    o1: str
    relation: str
    o2: str


@dataclass(frozen=True)
class RelationGraph:
    nodes: tuple[ObjectNode, ...]
    edges: tuple[RelationEdge, ...]
    forget_tuple: ForgetTuple

    def node(self, node_id: str) -> ObjectNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise GraphError(f"unknown node id {node_id!r}")

    def edges_with_role(self, role: EdgeLossRole) -> tuple[RelationEdge, ...]:
        return tuple(e for e in self.edges if e.loss_role == role)

    @property
    def forget_edge(self) -> RelationEdge:
        forget = self.edges_with_role(EdgeLossRole.UNSAFE_FORGET)
        if len(forget) != 1:
            raise GraphError(f"graph has {len(forget)} forget edges, expected exactly 1")
        return forget[0]


@dataclass(frozen=True)
class GraphSpec:
    """Labels for one forget tuple plus the preservation structure around it.

    ``subject_neighbor`` substitutes the subject in a safe reuse of the
    relation (adult-eating-hamburger); ``object_neighbor`` substitutes the
    object (kid-eating-salad). ``alternate_relation`` keeps the two forget
    endpoints paired in a safe way (kid-holding-hamburger).
    """

    subject: str
    relation: str
    object: str
    subject_neighbor: str
    object_neighbor: str
    alternate_relation: str
    neutral_edges: tuple[tuple[str, str, str], ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class RoleAssignment:
    l1_edges: tuple[str, ...]
    l3_edge: str
    l4_edges: tuple[str, ...]
    l2_nodes: tuple[str, ...]


def build_unlearn_graph(spec: GraphSpec) -> RelationGraph:
    """Construct the canonical unlearning graph for one forget tuple.

    Node and edge ids are derived from labels only, so identical specs
    produce byte-identical manifests.
    """
    required = {
        "subject": spec.subject,
        "relation": spec.relation,
        "object": spec.object,
        "subject_neighbor": spec.subject_neighbor,
        "object_neighbor": spec.object_neighbor,
        "alternate_relation": spec.alternate_relation,
    }
    for name, value in required.items():
        if not value or not value.strip():
            raise GraphError(f"missing field: {name}")
    if spec.alternate_relation.strip().lower() == spec.relation.strip().lower():
        raise GraphError("alternate_relation must differ from the forgotten relation")

    nodes: list[ObjectNode] = []
    seen: dict[str, str] = {}

    def add_node(label: str, role: NodeRole) -> str:
        node_id = slugify(label)
        if node_id in seen:
            if seen[node_id] == role.value:
                raise GraphError(f"duplicate label {label!r}")
            raise GraphError(f"label {label!r} already used with role {seen[node_id]}")
        seen[node_id] = role.value
        nodes.append(ObjectNode(id=node_id, label=label, role=role))
        return node_id

    o1 = add_node(spec.subject, NodeRole.FORGET_ENDPOINT)
    o2 = add_node(spec.object, NodeRole.FORGET_ENDPOINT)
    o3 = add_node(spec.subject_neighbor, NodeRole.PRESERVATION_NEIGHBOR)
    o4 = add_node(spec.object_neighbor, NodeRole.PRESERVATION_NEIGHBOR)

    def neutral_node(label: str) -> str:
        node_id = slugify(label)
        if node_id in seen:
            return node_id
        return add_node(label, NodeRole.NEUTRAL)

    edges: list[RelationEdge] = []
    edge_ids: set[str] = set()

    def add_edge(subject_id: str, relation: str, object_id: str, role: EdgeLossRole) -> None:
        edge_id = f"{subject_id}--{slugify(relation)}--{object_id}"
        if edge_id in edge_ids:
            raise GraphError(f"duplicate edge {edge_id!r}")
        edge_ids.add(edge_id)
        edges.append(
            RelationEdge(
                id=edge_id,
                relation=relation,
                subject_id=subject_id,
                object_id=object_id,
                loss_role=role,
            )
        )

    add_edge(o1, spec.relation, o2, EdgeLossRole.UNSAFE_FORGET)
    add_edge(o1, spec.relation, o4, EdgeLossRole.SAFE_PULL)
    add_edge(o3, spec.relation, o2, EdgeLossRole.SAFE_PULL)
    add_edge(o1, spec.alternate_relation, o2, EdgeLossRole.SAFE_PULL)
    for subj, rel, obj in spec.neutral_edges:
        s_id = neutral_node(subj)
        o_id = neutral_node(obj)
        add_edge(s_id, rel, o_id, EdgeLossRole.NEUTRAL_PULL)

    return RelationGraph(
        nodes=tuple(nodes),
        edges=tuple(edges),
        forget_tuple=ForgetTuple(o1=o1, relation=spec.relation, o2=o2),
    )


def validate(graph: RelationGraph) -> ValidationReport:
    """Check every structural invariant; violations are data, not exceptions."""
    violations: list[str] = []

    node_ids = [n.id for n in graph.nodes]
    if len(node_ids) != len(set(node_ids)):
        violations.append("duplicate node ids")
    known = set(node_ids)

    edge_ids = [e.id for e in graph.edges]
    if len(edge_ids) != len(set(edge_ids)):
        violations.append("duplicate edge ids")

    for edge in graph.edges:
        if edge.subject_id not in known or edge.object_id not in known:
            violations.append(f"edge {edge.id} references unknown node")

    forget = graph.edges_with_role(EdgeLossRole.UNSAFE_FORGET)
    if not forget:
        violations.append("no forget edge")
    elif len(forget) > 1:
        violations.append("multiple forget edges")
    else:
        edge = forget[0]
        ft = graph.forget_tuple
        if (edge.subject_id, edge.relation, edge.object_id) != (ft.o1, ft.relation, ft.o2):
            violations.append("forget_tuple does not match the forget edge")

        neighbor_ids = {n.id for n in graph.nodes if n.role == NodeRole.PRESERVATION_NEIGHBOR}
        safe_reuse = [
            e
            for e in graph.edges_with_role(EdgeLossRole.SAFE_PULL)
            if e.relation == edge.relation
            and (e.subject_id in neighbor_ids or e.object_id in neighbor_ids)
        ]
        if not safe_reuse:
            violations.append("no safe reuse of the forgotten relation with a preservation neighbor")

        endpoint_pair = {edge.subject_id, edge.object_id}
        alternates = [
            e
            for e in graph.edges
            if e.loss_role != EdgeLossRole.UNSAFE_FORGET
            and {e.subject_id, e.object_id} == endpoint_pair
        ]
        if not alternates:
            violations.append("no alternate relation between forget endpoints")

    return ValidationReport(violations=tuple(violations))


def assign_roles(graph: RelationGraph) -> RoleAssignment:
    """Map graph elements onto the loss terms that act on them."""
    report = validate(graph)
    if not report.ok:
        raise GraphError("invalid graph: " + "; ".join(report.violations))

    l1 = tuple(e.id for e in graph.edges_with_role(EdgeLossRole.SAFE_PULL))
    l4 = tuple(e.id for e in graph.edges_with_role(EdgeLossRole.NEUTRAL_PULL))
    l2 = tuple(
        n.id
        for n in graph.nodes
        if n.role in (NodeRole.FORGET_ENDPOINT, NodeRole.PRESERVATION_NEIGHBOR)
    )
    return RoleAssignment(
        l1_edges=l1,
        l3_edge=graph.forget_edge.id,
        l4_edges=l4,
        l2_nodes=l2,
    )


def emit_graph(graph: RelationGraph) -> str:
    """Serialize to the graph manifest format: JSON with stable key order."""
    doc = {
        "nodes": [
            {"id": n.id, "label": n.label, "role": n.role.value} for n in graph.nodes
        ],
        "edges": [
            {
                "id": e.id,
                "relation": e.relation,
                "from": e.subject_id,
                "to": e.object_id,
                "loss_role": e.loss_role.value,
            }
            for e in graph.edges
        ],
        "forget_tuple": {
            "o1": graph.forget_tuple.o1,
            "r": graph.forget_tuple.relation,
            "o2": graph.forget_tuple.o2,
        },
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def _require(obj: dict, key: str, where: str) -> object:
    if key not in obj:
        raise GraphError(f"{where}: missing {key!r}")
    return obj[key]


def parse_graph(text: str) -> RelationGraph:
    """Parse a graph manifest; reports the offending line or field on failure."""
    if not text.strip():
        raise GraphError("empty graph manifest")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"graph manifest line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise GraphError("graph manifest must be a JSON object")

    nodes = []
    for i, raw in enumerate(_require(doc, "nodes", "manifest")):
        where = f"nodes[{i}]"
        role_value = str(_require(raw, "role", where))
        try:
            role = NodeRole(role_value)
        except ValueError as exc:
            raise GraphError(f"{where}: unknown role {role_value!r}") from exc
        nodes.append(
            ObjectNode(
                id=str(_require(raw, "id", where)),
                label=str(_require(raw, "label", where)),
                role=role,
            )
        )

    edges = []
    for i, raw in enumerate(_require(doc, "edges", "manifest")):
        where = f"edges[{i}]"
        role_value = str(_require(raw, "loss_role", where))
        try:
            loss_role = EdgeLossRole(role_value)
        except ValueError as exc:
            raise GraphError(f"{where}: unknown loss_role {role_value!r}") from exc
        edges.append(
            RelationEdge(
                id=str(_require(raw, "id", where)),
                relation=str(_require(raw, "relation", where)),
                subject_id=str(_require(raw, "from", where)),
                object_id=str(_require(raw, "to", where)),
                loss_role=loss_role,
            )
        )

    raw_tuple = _require(doc, "forget_tuple", "manifest")
    forget = ForgetTuple(
        o1=str(_require(raw_tuple, "o1", "forget_tuple")),
        relation=str(_require(raw_tuple, "r", "forget_tuple")),
        o2=str(_require(raw_tuple, "o2", "forget_tuple")),
    )
    return RelationGraph(nodes=tuple(nodes), edges=tuple(edges), forget_tuple=forget)


def save_graph(graph: RelationGraph, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(emit_graph(graph), encoding="utf-8")
    return path


def load_graph(path: str | Path) -> RelationGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))
