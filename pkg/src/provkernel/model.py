"""Versioned workflow DAGs: nodes, dependencies, bindings, annotations.

A :class:`WorkflowSpec` is an immutable value.  Structural operations
(adding a dependency, flattening composites, reconstructing parts) return
new values; the original is never mutated.  Every spec accepted by
:func:`validate` is acyclic, has exactly one head node, and every node is
reachable from the head.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Optional, Union

from .errors import CycleIntroduced, MalformedSpec, UnknownNode
from .paths import ClusterKind, ClusterPath, ItemPath

MEDIA_HINTS = ("bytes", "numeric-vector", "text")


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _ts(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _parse_ts(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00"))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataRef:
    """Reference to a piece of data by name, content digest, and size."""

    name: str
    digest: str  # 64 hex chars, sha256 of the payload
    size: int
    media_hint: str = "bytes"
    payload_path: Optional[ClusterPath] = None

    def __post_init__(self):
        if len(self.digest) != 64 or any(c not in "0123456789abcdef" for c in self.digest):
            raise MalformedSpec(f"digest must be 64 hex chars, got {self.digest!r}")
        if self.media_hint not in MEDIA_HINTS:
            raise MalformedSpec(f"unknown media hint {self.media_hint!r}")


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class SingleKind:
    script_ref: str


@dataclass(frozen=True)
class CompositeKind:
    sub: "WorkflowSpec"


NodeKind = Union[SingleKind, CompositeKind]


@dataclass(frozen=True)
class ActivityNode:
    id: str
    kind: NodeKind
    metadata: tuple[tuple[str, str], ...] = ()
    declared_inputs: tuple[str, ...] = ()
    declared_outputs: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise MalformedSpec("node id must be non-empty")
        for ports in (self.declared_inputs, self.declared_outputs):
            if len(set(ports)) != len(ports):
                raise MalformedSpec(f"duplicate port names on node {self.id!r}")

    @property
    def meta(self) -> dict[str, str]:
        return dict(self.metadata)

    def is_composite(self) -> bool:
        return isinstance(self.kind, CompositeKind)


@dataclass(frozen=True, order=True)
class Dependency:
    src: str
    dst: str

    def __post_init__(self):
        if self.src == self.dst:
            raise MalformedSpec(f"self-dependency on {self.src!r}")


@dataclass(frozen=True)
class ExternalSource:
    """Input satisfied at execution start, keyed by external name.

    ``pinned`` optionally records a concrete DataRef (e.g. when a derived
    version wires a severed upstream edge to a stored outcome).
    """

    name: str
    pinned: Optional[DataRef] = None


@dataclass(frozen=True)
class UpstreamSource:
    node: str
    port: str


@dataclass(frozen=True)
class InputBinding:
    node: str
    port: str
    source: Union[ExternalSource, UpstreamSource]


@dataclass(frozen=True)
class Annotation:
    author: str
    at: datetime
    text: str
    tags: tuple[str, ...] = ()
    target: Optional[str] = None  # node id, or None for the whole workflow


@dataclass(frozen=True)
class VersionInfo:
    version: int = 1
    parent: Optional[int] = None
    created_at: datetime = field(default_factory=utcnow)
    note: str = ""

    def __post_init__(self):
        if self.version < 1:
            raise MalformedSpec("version numbers start at 1")
        if self.parent is not None and self.parent >= self.version:
            raise MalformedSpec("parent version must precede the version")


@dataclass(frozen=True)
class WorkflowSpec:
    name: str
    version_info: VersionInfo = field(default_factory=VersionInfo)
    nodes: tuple[ActivityNode, ...] = ()
    deps: tuple[Dependency, ...] = ()
    bindings: tuple[InputBinding, ...] = ()
    annotations: tuple[Annotation, ...] = ()
    metadata: tuple[tuple[str, str], ...] = ()

    @property
    def meta(self) -> dict[str, str]:
        return dict(self.metadata)

    def node(self, node_id: str) -> ActivityNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise UnknownNode(f"no node {node_id!r} in workflow {self.name!r}")

    def node_ids(self) -> set[str]:
        return {n.id for n in self.nodes}

    def with_annotations(self, extra: Iterable[Annotation]) -> "WorkflowSpec":
        return replace(self, annotations=self.annotations + tuple(extra))


# ---------------------------------------------------------------------------
# Structural operations
# ---------------------------------------------------------------------------

def _adjacency(deps: Iterable[Dependency]) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {}
    for d in deps:
        adj.setdefault(d.src, set()).add(d.dst)
    return adj


def _has_cycle(node_ids: set[str], deps: Iterable[Dependency]) -> bool:
    adj = _adjacency(deps)
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in node_ids}

    for start in node_ids:
        if color[start] != WHITE:
            continue
        stack = [(start, iter(sorted(adj.get(start, ()))))]
        color[start] = GREY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color.get(nxt, WHITE) == GREY:
                    return True
                if color.get(nxt, WHITE) == WHITE:
                    color[nxt] = GREY
                    stack.append((nxt, iter(sorted(adj.get(nxt, ())))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return False


def validate(spec: WorkflowSpec) -> None:
    """Check every WorkflowSpec invariant; raise MalformedSpec on violation."""
    ids = [n.id for n in spec.nodes]
    if not ids:
        raise MalformedSpec(f"workflow {spec.name!r} has no nodes")
    if len(set(ids)) != len(ids):
        raise MalformedSpec(f"duplicate node ids in workflow {spec.name!r}")
    id_set = set(ids)

    for d in spec.deps:
        if d.src not in id_set or d.dst not in id_set:
            raise MalformedSpec(f"dependency {d.src}->{d.dst} references unknown node")
    if len(set(spec.deps)) != len(spec.deps):
        raise MalformedSpec("duplicate dependencies")

    if _has_cycle(id_set, spec.deps):
        raise MalformedSpec(f"dependency graph of {spec.name!r} has a cycle")

    targets = {d.dst for d in spec.deps}
    roots = sorted(id_set - targets)
    if len(roots) != 1:
        raise MalformedSpec(
            f"workflow {spec.name!r} must have exactly one head node, found {roots}"
        )

    # reachability from the head
    adj = _adjacency(spec.deps)
    seen = {roots[0]}
    frontier = [roots[0]]
    while frontier:
        for nxt in adj.get(frontier.pop(), ()):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    unreachable = sorted(id_set - seen)
    if unreachable:
        raise MalformedSpec(f"nodes unreachable from head: {unreachable}")

    # bindings: exactly one per declared input port; upstream sources must be
    # transitive predecessors exposing the named output port
    bound: dict[tuple[str, str], InputBinding] = {}
    for b in spec.bindings:
        if b.node not in id_set:
            raise MalformedSpec(f"binding references unknown node {b.node!r}")
        node = spec.node(b.node)
        if b.port not in node.declared_inputs:
            raise MalformedSpec(f"binding on undeclared port {b.node}.{b.port}")
        if (b.node, b.port) in bound:
            raise MalformedSpec(f"port {b.node}.{b.port} bound more than once")
        bound[(b.node, b.port)] = b
        if isinstance(b.source, UpstreamSource):
            if b.source.node not in id_set:
                raise MalformedSpec(f"binding source node {b.source.node!r} unknown")
            if b.source.node not in ancestors(spec, b.node):
                raise MalformedSpec(
                    f"binding source {b.source.node!r} is not a predecessor of {b.node!r}"
                )
            src_node = spec.node(b.source.node)
            if b.source.port not in src_node.declared_outputs:
                raise MalformedSpec(
                    f"binding source port {b.source.node}.{b.source.port} not declared"
                )
    for n in spec.nodes:
        for port in n.declared_inputs:
            if (n.id, port) not in bound:
                raise MalformedSpec(f"declared input {n.id}.{port} has no binding")

    for a in spec.annotations:
        if a.target is not None and a.target not in id_set:
            raise MalformedSpec(f"annotation targets unknown node {a.target!r}")

    for n in spec.nodes:
        if isinstance(n.kind, CompositeKind):
            validate(n.kind.sub)


def head_node(spec: WorkflowSpec) -> str:
    """The unique node with zero predecessors."""
    targets = {d.dst for d in spec.deps}
    roots = sorted(spec.node_ids() - targets)
    if len(roots) != 1:
        raise MalformedSpec(f"expected exactly one head node, found {roots}")
    return roots[0]


def successors(spec: WorkflowSpec, node_id: str) -> set[str]:
    if node_id not in spec.node_ids():
        raise UnknownNode(f"no node {node_id!r}")
    return {d.dst for d in spec.deps if d.src == node_id}


def predecessors(spec: WorkflowSpec, node_id: str) -> set[str]:
    if node_id not in spec.node_ids():
        raise UnknownNode(f"no node {node_id!r}")
    return {d.src for d in spec.deps if d.dst == node_id}


def ancestors(spec: WorkflowSpec, node_id: str) -> set[str]:
    """All transitive predecessors of ``node_id`` (excluding itself)."""
    preds = _adjacency(Dependency(d.dst, d.src) for d in spec.deps)
    seen: set[str] = set()
    frontier = [node_id]
    while frontier:
        for p in preds.get(frontier.pop(), ()):
            if p not in seen:
                seen.add(p)
                frontier.append(p)
    return seen


def add_dependency(spec: WorkflowSpec, dep: Dependency) -> WorkflowSpec:
    """Return a new spec with ``dep`` added; reject if it breaks invariants."""
    ids = spec.node_ids()
    if dep.src not in ids or dep.dst not in ids:
        raise UnknownNode(f"dependency endpoint missing: {dep.src}->{dep.dst}")
    if dep in spec.deps:
        return spec
    new_deps = spec.deps + (dep,)
    if _has_cycle(ids, new_deps):
        raise CycleIntroduced(f"adding {dep.src}->{dep.dst} would create a cycle")
    out = replace(spec, deps=new_deps)
    validate(out)
    return out


def topological_order(spec: WorkflowSpec) -> list[str]:
    """Deterministic topological sort; ties broken by ascending node id."""
    validate(spec)
    indeg = {n.id: 0 for n in spec.nodes}
    adj = _adjacency(spec.deps)
    for d in spec.deps:
        indeg[d.dst] += 1
    ready = [n for n, deg in indeg.items() if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for nxt in sorted(adj.get(node, ())):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(order) != len(indeg):
        raise MalformedSpec("cycle detected during topological sort")
    return order


def _sinks(spec: WorkflowSpec) -> list[str]:
    sources = {d.src for d in spec.deps}
    return sorted(spec.node_ids() - sources)


def flatten(spec: WorkflowSpec) -> WorkflowSpec:
    """Expand every composite node into its sub-graph.

    Sub-node ids are prefixed ``<composite-id>/``.  Dependencies into the
    composite are rewired to the sub-head; dependencies out of it are rewired
    from every sink of the sub-graph.  Bindings onto a composite port replace
    the matching external bindings inside the sub-graph; downstream bindings
    reading a composite output are rewired to the unique sink declaring that
    output port.
    """
    validate(spec)
    composites = [n for n in spec.nodes if n.is_composite()]
    if not composites:
        return spec

    comp = composites[0]
    sub = flatten(comp.kind.sub)  # innermost first
    prefix = comp.id + "/"

    sub_head = prefix + head_node(sub)
    sub_sinks = [prefix + s for s in _sinks(sub)]

    def pfx(node_id: str) -> str:
        return prefix + node_id

    new_nodes = [n for n in spec.nodes if n.id != comp.id]
    for n in sub.nodes:
        new_nodes.append(replace(n, id=pfx(n.id)))

    new_deps: list[Dependency] = []
    for d in spec.deps:
        if d.dst == comp.id:
            new_deps.append(Dependency(d.src, sub_head))
        elif d.src == comp.id:
            for s in sub_sinks:
                new_deps.append(Dependency(s, d.dst))
        else:
            new_deps.append(d)
    for d in sub.deps:
        new_deps.append(Dependency(pfx(d.src), pfx(d.dst)))

    # bindings supplied to the composite, keyed by its declared input port
    comp_bindings = {b.port: b for b in spec.bindings if b.node == comp.id}

    def sink_for_output(port: str) -> str:
        owners = [
            s for s in _sinks(sub) if port in sub.node(s).declared_outputs
        ]
        if len(owners) != 1:
            raise MalformedSpec(
                f"composite {comp.id!r} output {port!r} must map to exactly one sink"
            )
        return pfx(owners[0])

    new_bindings: list[InputBinding] = []
    for b in spec.bindings:
        if b.node == comp.id:
            continue
        if isinstance(b.source, UpstreamSource) and b.source.node == comp.id:
            new_bindings.append(
                replace(b, source=UpstreamSource(sink_for_output(b.source.port), b.source.port))
            )
        else:
            new_bindings.append(b)
    for b in sub.bindings:
        if isinstance(b.source, ExternalSource) and b.source.name in comp_bindings:
            outer = comp_bindings[b.source.name].source
            if isinstance(outer, UpstreamSource) and outer.node == comp.id:
                raise MalformedSpec("composite cannot feed its own input")
            new_bindings.append(InputBinding(pfx(b.node), b.port, outer))
        elif isinstance(b.source, UpstreamSource):
            new_bindings.append(
                InputBinding(pfx(b.node), b.port, UpstreamSource(pfx(b.source.node), b.source.port))
            )
        else:
            new_bindings.append(InputBinding(pfx(b.node), b.port, b.source))

    new_annotations = list(spec.annotations)
    for a in sub.annotations:
        new_annotations.append(
            replace(a, target=pfx(a.target) if a.target else None)
        )

    out = replace(
        spec,
        nodes=tuple(new_nodes),
        deps=tuple(dict.fromkeys(new_deps)),
        bindings=tuple(new_bindings),
        annotations=tuple(new_annotations),
    )
    validate(out)
    return flatten(out)


# ---------------------------------------------------------------------------
# Canonical serialization (workflow.v1) and structural hashing
# ---------------------------------------------------------------------------

def _cluster_path_dict(p: ClusterPath) -> dict:
    return {"item": str(p.item), "kind": p.kind.value, "path": p.path}


def _cluster_path_from(d: dict) -> ClusterPath:
    return ClusterPath(ItemPath.parse(d["item"]), ClusterKind(d["kind"]), d["path"])


def dataref_to_dict(r: DataRef) -> dict:
    d = {
        "name": r.name,
        "digest": r.digest,
        "size": r.size,
        "media_hint": r.media_hint,
    }
    if r.payload_path is not None:
        d["payload_path"] = _cluster_path_dict(r.payload_path)
    return d


def dataref_from_dict(d: dict) -> DataRef:
    return DataRef(
        name=d["name"],
        digest=d["digest"],
        size=int(d["size"]),
        media_hint=d.get("media_hint", "bytes"),
        payload_path=_cluster_path_from(d["payload_path"]) if d.get("payload_path") else None,
    )


def _node_to_dict(n: ActivityNode) -> dict:
    d: dict = {
        "id": n.id,
        "metadata": dict(sorted(n.metadata)),
        "inputs": list(n.declared_inputs),
        "outputs": list(n.declared_outputs),
    }
    if isinstance(n.kind, SingleKind):
        d["kind"] = "single"
        d["script"] = n.kind.script_ref
    else:
        d["kind"] = "composite"
        d["sub"] = spec_to_dict(n.kind.sub)
    return d


def _node_from_dict(d: dict) -> ActivityNode:
    if d["kind"] == "single":
        kind: NodeKind = SingleKind(d["script"])
    elif d["kind"] == "composite":
        kind = CompositeKind(spec_from_dict(d["sub"]))
    else:
        raise MalformedSpec(f"unknown node kind {d['kind']!r}")
    return ActivityNode(
        id=d["id"],
        kind=kind,
        metadata=tuple(sorted(d.get("metadata", {}).items())),
        declared_inputs=tuple(d.get("inputs", ())),
        declared_outputs=tuple(d.get("outputs", ())),
    )


def _binding_to_dict(b: InputBinding) -> dict:
    if isinstance(b.source, ExternalSource):
        source: dict = {"type": "external", "name": b.source.name}
        if b.source.pinned is not None:
            source["pinned"] = dataref_to_dict(b.source.pinned)
    else:
        source = {"type": "upstream", "node": b.source.node, "port": b.source.port}
    return {"node": b.node, "port": b.port, "source": source}


def _binding_from_dict(d: dict) -> InputBinding:
    s = d["source"]
    if s["type"] == "external":
        source: Union[ExternalSource, UpstreamSource] = ExternalSource(
            s["name"], dataref_from_dict(s["pinned"]) if s.get("pinned") else None
        )
    elif s["type"] == "upstream":
        source = UpstreamSource(s["node"], s["port"])
    else:
        raise MalformedSpec(f"unknown binding source type {s['type']!r}")
    return InputBinding(d["node"], d["port"], source)


def annotation_to_dict(a: Annotation) -> dict:
    return {
        "author": a.author,
        "at": _ts(a.at),
        "text": a.text,
        "tags": list(a.tags),
        "target": a.target,
    }


def annotation_from_dict(d: dict) -> Annotation:
    return Annotation(
        author=d["author"],
        at=_parse_ts(d["at"]),
        text=d["text"],
        tags=tuple(d.get("tags", ())),
        target=d.get("target"),
    )


def spec_to_dict(spec: WorkflowSpec) -> dict:
    """Render a spec as the workflow.v1 JSON structure."""
    vi = spec.version_info
    return {
        "format": "workflow.v1",
        "name": spec.name,
        "version": {
            "version": vi.version,
            "parent": vi.parent,
            "created_at": _ts(vi.created_at),
            "note": vi.note,
        },
        "nodes": [_node_to_dict(n) for n in sorted(spec.nodes, key=lambda n: n.id)],
        "deps": [
            {"from": d.src, "to": d.dst} for d in sorted(spec.deps)
        ],
        "bindings": [
            _binding_to_dict(b)
            for b in sorted(spec.bindings, key=lambda b: (b.node, b.port))
        ],
        "annotations": [annotation_to_dict(a) for a in spec.annotations],
        "metadata": dict(sorted(spec.metadata)),
    }


def spec_from_dict(d: dict) -> WorkflowSpec:
    if d.get("format", "workflow.v1") != "workflow.v1":
        raise MalformedSpec(f"unsupported workflow format {d.get('format')!r}")
    v = d.get("version") or {}
    spec = WorkflowSpec(
        name=d["name"],
        version_info=VersionInfo(
            version=int(v.get("version", 1)),
            parent=v.get("parent"),
            created_at=_parse_ts(v["created_at"]) if v.get("created_at") else utcnow(),
            note=v.get("note", ""),
        ),
        nodes=tuple(_node_from_dict(n) for n in d.get("nodes", ())),
        deps=tuple(Dependency(x["from"], x["to"]) for x in d.get("deps", ())),
        bindings=tuple(_binding_from_dict(b) for b in d.get("bindings", ())),
        annotations=tuple(annotation_from_dict(a) for a in d.get("annotations", ())),
        metadata=tuple(sorted(d.get("metadata", {}).items())),
    )
    validate(spec)
    return spec


def canonical_json(spec: WorkflowSpec) -> bytes:
    """Full canonical serialization, stable across independent renderings."""
    return json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":")).encode()


def _structural_dict(spec: WorkflowSpec) -> dict:
    """The hash-relevant view: nodes, deps, bindings and node metadata only.

    Annotations, version info, workflow name and workflow-level metadata are
    excluded so that annotating or re-versioning a pipeline never changes its
    structural identity.
    """
    def node_view(n: ActivityNode) -> dict:
        d = {
            "id": n.id,
            "metadata": dict(sorted(n.metadata)),
            "inputs": list(n.declared_inputs),
            "outputs": list(n.declared_outputs),
        }
        if isinstance(n.kind, SingleKind):
            d["kind"] = "single"
            d["script"] = n.kind.script_ref
        else:
            d["kind"] = "composite"
            d["sub"] = _structural_dict(n.kind.sub)
        return d

    def binding_view(b: InputBinding) -> dict:
        out = _binding_to_dict(b)
        # a pinned external DataRef is execution wiring, part of structure
        return out

    return {
        "nodes": [node_view(n) for n in sorted(spec.nodes, key=lambda n: n.id)],
        "deps": [{"from": d.src, "to": d.dst} for d in sorted(spec.deps)],
        "bindings": [
            binding_view(b) for b in sorted(spec.bindings, key=lambda b: (b.node, b.port))
        ],
    }


def structural_hash(spec: WorkflowSpec) -> str:
    """256-bit content hash of the canonical structural form, as 64 hex chars."""
    blob = json.dumps(_structural_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
