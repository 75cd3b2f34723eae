"""Open Provenance Model graphs and their canonical XML interchange (opm.v1).

A graph is a tripartite causal structure of processes, artifacts and agents
with role-labelled edges.  Export is byte-deterministic: nodes sorted by id,
edges by (kind, from, to, role), attributes by key.  Import is strict and
rejects unknown elements and attributes with position information.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from enum import Enum

from .errors import EmptyExecution, InvalidGraph, ParseError, SchemaViolation
from .kernel import ActivityState, ExecutionId, ProvenanceKernel, Transition


class OpmNodeKind(str, Enum):
    PROCESS = "Process"
    ARTIFACT = "Artifact"
    AGENT = "Agent"


class OpmEdgeKind(str, Enum):
    USED = "used"
    WAS_GENERATED_BY = "wasGeneratedBy"
    WAS_CONTROLLED_BY = "wasControlledBy"
    WAS_TRIGGERED_BY = "wasTriggeredBy"
    WAS_DERIVED_FROM = "wasDerivedFrom"


#: (from kind, to kind) required per edge kind.
EDGE_TYPING: dict[OpmEdgeKind, tuple[OpmNodeKind, OpmNodeKind]] = {
    OpmEdgeKind.USED: (OpmNodeKind.PROCESS, OpmNodeKind.ARTIFACT),
    OpmEdgeKind.WAS_GENERATED_BY: (OpmNodeKind.ARTIFACT, OpmNodeKind.PROCESS),
    OpmEdgeKind.WAS_CONTROLLED_BY: (OpmNodeKind.PROCESS, OpmNodeKind.AGENT),
    OpmEdgeKind.WAS_TRIGGERED_BY: (OpmNodeKind.PROCESS, OpmNodeKind.PROCESS),
    OpmEdgeKind.WAS_DERIVED_FROM: (OpmNodeKind.ARTIFACT, OpmNodeKind.ARTIFACT),
}

#: Edge kinds that carry a role label.
ROLED_KINDS = frozenset(
    {OpmEdgeKind.USED, OpmEdgeKind.WAS_GENERATED_BY, OpmEdgeKind.WAS_CONTROLLED_BY}
)


@dataclass(frozen=True)
class OpmNode:
    id: str
    kind: OpmNodeKind
    label: str = ""
    attrs: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True, order=True)
class OpmEdge:
    kind: OpmEdgeKind
    src: str
    dst: str
    role: str = ""


@dataclass(frozen=True)
class OpmGraph:
    nodes: tuple[OpmNode, ...] = ()
    edges: tuple[OpmEdge, ...] = ()

    def node_map(self) -> dict[str, OpmNode]:
        return {n.id: n for n in self.nodes}


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: str
    detail: str


def validate_graph(g: OpmGraph) -> list[Violation]:
    """All typing, endpoint-existence and acyclicity violations, as data."""
    violations: list[Violation] = []
    kinds: dict[str, OpmNodeKind] = {}
    for n in g.nodes:
        if n.id in kinds:
            violations.append(Violation("unique-node-id", n.id, "duplicate node id"))
        kinds[n.id] = n.kind

    adj: dict[str, set[str]] = {}
    for e in g.edges:
        edge_name = f"{e.kind.value}({e.src}->{e.dst})"
        missing = False
        for endpoint in (e.src, e.dst):
            if endpoint not in kinds:
                violations.append(
                    Violation("endpoint-exists", edge_name, f"unknown node {endpoint!r}")
                )
                missing = True
        if missing:
            continue
        want_src, want_dst = EDGE_TYPING[e.kind]
        if kinds[e.src] is not want_src or kinds[e.dst] is not want_dst:
            violations.append(
                Violation(
                    "edge-typing", edge_name,
                    f"{e.kind.value} must be {want_src.value}->{want_dst.value}, "
                    f"got {kinds[e.src].value}->{kinds[e.dst].value}",
                )
            )
        if e.role and e.kind not in ROLED_KINDS:
            violations.append(
                Violation("edge-role", edge_name, f"{e.kind.value} edges carry no role")
            )
        adj.setdefault(e.src, set()).add(e.dst)

    # cycle check over the full causal graph
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in kinds}
    for start in sorted(kinds):
        if color.get(start, WHITE) != WHITE:
            continue
        stack = [(start, iter(sorted(adj.get(start, ()))))]
        color[start] = GREY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color.get(nxt, WHITE) == GREY:
                    violations.append(
                        Violation("acyclic", nxt, "causal graph contains a cycle")
                    )
                elif color.get(nxt, WHITE) == WHITE:
                    color[nxt] = GREY
                    stack.append((nxt, iter(sorted(adj.get(nxt, ())))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return violations


def isomorphic(g1: OpmGraph, g2: OpmGraph) -> bool:
    """Equality after canonical ordering of nodes, edges, and attributes."""
    def canon(g: OpmGraph):
        nodes = sorted(
            (n.id, n.kind.value, n.label, tuple(sorted(n.attrs))) for n in g.nodes
        )
        edges = sorted((e.kind.value, e.src, e.dst, e.role) for e in g.edges)
        return nodes, edges

    return canon(g1) == canon(g2)


# ---------------------------------------------------------------------------
# Mapping captured executions to OPM
# ---------------------------------------------------------------------------

def to_opm(kernel: ProvenanceKernel, execution: ExecutionId) -> OpmGraph:
    """Map one recorded execution to an OPM graph.

    Every node instance that reached a terminal outcome state becomes a
    Process; every distinct payload consumed or produced becomes an Artifact
    keyed by content digest; every agent seen in the trace becomes an Agent.
    """
    spec = kernel.execution_spec(execution)
    trace = kernel.trace(execution)
    states = kernel.replay_states(spec, trace)

    done = {
        n for n, s in states.items()
        if s in (ActivityState.COMPLETE, ActivityState.FAILED)
    }
    if not done:
        raise EmptyExecution(f"execution {execution} has no terminal node")

    run = execution.run
    nodes: dict[str, OpmNode] = {}
    edges: list[OpmEdge] = []
    introduced: dict[str, str] = {}  # digest -> canonical artifact id

    def proc_id(node: str) -> str:
        return f"proc:{run}:{node}"

    def artifact_node(art_id: str, ref) -> None:
        if art_id not in nodes:
            nodes[art_id] = OpmNode(
                art_id, OpmNodeKind.ARTIFACT, label=ref.name,
                attrs=(("digest", ref.digest), ("size", str(ref.size))),
            )

    def consume(ref) -> str:
        art_id = introduced.setdefault(ref.digest, f"art:{ref.digest}")
        artifact_node(art_id, ref)
        return art_id

    agents_seen = sorted({e.agent for e in trace if e.node in done})
    for agent_id in agents_seen:
        nodes[f"ag:{agent_id}"] = OpmNode(f"ag:{agent_id}", OpmNodeKind.AGENT, label=agent_id)

    agent_of = {
        e.node: e.agent for e in trace
        if e.transition in (Transition.COMPLETE_OK, Transition.FAIL)
    }
    # walk processes in completion order so the first introduction of any
    # digest precedes every consumer; re-generated digests become suffixed
    # artifact states, which keeps the causal graph structurally acyclic
    completion_order = [
        e.node for e in trace
        if e.transition in (Transition.COMPLETE_OK, Transition.FAIL) and e.node in done
    ]

    for node_id in completion_order:
        pid = proc_id(node_id)
        status = "failed" if states[node_id] is ActivityState.FAILED else "complete"
        nodes[pid] = OpmNode(
            pid, OpmNodeKind.PROCESS, label=node_id, attrs=(("status", status),)
        )
        edges.append(
            OpmEdge(OpmEdgeKind.WAS_CONTROLLED_BY, pid, f"ag:{agent_of[node_id]}",
                    role="executed-on")
        )

        inputs = kernel.resolve_inputs(execution, node_id)
        input_ids = []
        for port in sorted(inputs):
            art_id = consume(inputs[port])
            input_ids.append(art_id)
            edges.append(OpmEdge(OpmEdgeKind.USED, pid, art_id, role=port))

        outcome = kernel.latest_outcome(execution, node_id)
        if outcome is not None:
            for port, ref in sorted(outcome.outputs):
                if ref.digest in introduced:
                    art_id = f"art:{ref.digest}.g{run}.{node_id}"
                else:
                    art_id = f"art:{ref.digest}"
                    introduced[ref.digest] = art_id
                artifact_node(art_id, ref)
                edges.append(OpmEdge(OpmEdgeKind.WAS_GENERATED_BY, art_id, pid, role=port))
                for in_id in input_ids:
                    if in_id != art_id:
                        edges.append(OpmEdge(OpmEdgeKind.WAS_DERIVED_FROM, art_id, in_id))

    for dep in spec.deps:
        if dep.src in done and dep.dst in done:
            edges.append(
                OpmEdge(OpmEdgeKind.WAS_TRIGGERED_BY, proc_id(dep.dst), proc_id(dep.src))
            )

    graph = OpmGraph(
        nodes=tuple(nodes[i] for i in sorted(nodes)),
        edges=tuple(sorted(set(edges))),
    )
    violations = validate_graph(graph)
    if violations:
        raise InvalidGraph(f"mapping produced an invalid graph: {violations[0]}")
    return graph


# ---------------------------------------------------------------------------
# Canonical XML (opm.v1)
# ---------------------------------------------------------------------------

_KIND_SECTION = {
    OpmNodeKind.PROCESS: "processes",
    OpmNodeKind.ARTIFACT: "artifacts",
    OpmNodeKind.AGENT: "agents",
}
_SECTION_ELEMENT = {
    OpmNodeKind.PROCESS: "process",
    OpmNodeKind.ARTIFACT: "artifact",
    OpmNodeKind.AGENT: "agent",
}


def export_xml(g: OpmGraph) -> bytes:
    violations = validate_graph(g)
    if violations:
        v = violations[0]
        raise InvalidGraph(f"cannot export invalid graph: {v.rule} on {v.subject}: {v.detail}")

    root = ET.Element("opmGraph", {"version": "1.1"})
    sections = {
        kind: ET.SubElement(root, section) for kind, section in _KIND_SECTION.items()
    }
    for node in sorted(g.nodes, key=lambda n: n.id):
        elem = ET.SubElement(
            sections[node.kind], _SECTION_ELEMENT[node.kind], {"id": node.id}
        )
        if node.label:
            elem.set("label", node.label)
        for key, value in sorted(node.attrs):
            attr = ET.SubElement(elem, "attr", {"key": key})
            attr.text = value
    causal = ET.SubElement(root, "causalDependencies")
    for edge in sorted(g.edges, key=lambda e: (e.kind.value, e.src, e.dst, e.role)):
        attrs = {"from": edge.src, "to": edge.dst}
        if edge.role:
            attrs["role"] = edge.role
        ET.SubElement(causal, edge.kind.value, attrs)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


_NODE_ALLOWED_ATTRS = {"id", "label"}
_EDGE_ALLOWED_ATTRS = {"from", "to", "role"}


def import_xml(body: bytes) -> OpmGraph:
    try:
        root = ET.fromstring(body)
    except ET.ParseError as exc:
        raise ParseError(f"malformed OPM XML: {exc}") from exc
    if root.tag != "opmGraph":
        raise SchemaViolation(f"expected <opmGraph> root, found <{root.tag}>")
    if set(root.attrib) - {"version"}:
        raise SchemaViolation(f"unknown attributes on <opmGraph>: {sorted(root.attrib)}")
    if root.get("version") != "1.1":
        raise SchemaViolation(f"unsupported opm.v1 version {root.get('version')!r}")

    expected_sections = ["processes", "artifacts", "agents", "causalDependencies"]
    children = list(root)
    if [c.tag for c in children] != expected_sections:
        raise SchemaViolation(
            f"<opmGraph> must contain exactly {expected_sections}, "
            f"found {[c.tag for c in children]}"
        )

    nodes: list[OpmNode] = []
    section_kinds = {
        "processes": OpmNodeKind.PROCESS,
        "artifacts": OpmNodeKind.ARTIFACT,
        "agents": OpmNodeKind.AGENT,
    }
    for section in children[:3]:
        kind = section_kinds[section.tag]
        want_tag = _SECTION_ELEMENT[kind]
        for elem in section:
            if elem.tag != want_tag:
                raise SchemaViolation(
                    f"unexpected <{elem.tag}> inside <{section.tag}>"
                )
            extra = set(elem.attrib) - _NODE_ALLOWED_ATTRS
            if extra:
                raise SchemaViolation(
                    f"unknown attributes {sorted(extra)} on <{elem.tag} id={elem.get('id')!r}>"
                )
            node_id = elem.get("id")
            if not node_id:
                raise SchemaViolation(f"<{elem.tag}> missing id attribute")
            attrs = []
            for child in elem:
                if child.tag != "attr":
                    raise SchemaViolation(
                        f"unexpected <{child.tag}> inside <{elem.tag} id={node_id!r}>"
                    )
                if set(child.attrib) - {"key"}:
                    raise SchemaViolation(f"unknown attributes on <attr> of {node_id!r}")
                attrs.append((child.get("key") or "", child.text or ""))
            nodes.append(OpmNode(node_id, kind, elem.get("label", ""), tuple(attrs)))

    edges: list[OpmEdge] = []
    edge_kinds = {k.value: k for k in OpmEdgeKind}
    for elem in children[3]:
        if elem.tag not in edge_kinds:
            raise SchemaViolation(f"unknown causal dependency <{elem.tag}>")
        extra = set(elem.attrib) - _EDGE_ALLOWED_ATTRS
        if extra:
            raise SchemaViolation(f"unknown attributes {sorted(extra)} on <{elem.tag}>")
        if len(elem):
            raise SchemaViolation(f"<{elem.tag}> must be empty")
        src, dst = elem.get("from"), elem.get("to")
        if not src or not dst:
            raise SchemaViolation(f"<{elem.tag}> missing from/to attributes")
        edges.append(OpmEdge(edge_kinds[elem.tag], src, dst, elem.get("role", "")))

    graph = OpmGraph(tuple(nodes), tuple(edges))
    violations = validate_graph(graph)
    if violations:
        v = violations[0]
        raise InvalidGraph(f"imported graph invalid: {v.rule} on {v.subject}: {v.detail}")
    return graph
