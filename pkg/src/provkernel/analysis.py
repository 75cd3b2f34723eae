"""User-facing provenance capabilities over a kernel.

Reconstruction returns the stored spec (plus any annotations appended after
it was written).  Validation compares a candidate pipeline against a
reference blueprint, or execution results against a reference dataset,
either offline (stored outcomes) or online (fresh re-execution).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

from . import model
from .errors import UnknownNode
from .kernel import (
    Executor,
    ExecutionId,
    ExecutionStatus,
    Outcome,
    ProvenanceKernel,
)
from .model import (
    Annotation,
    DataRef,
    Dependency,
    SingleKind,
    UpstreamSource,
    WorkflowSpec,
)
from .paths import ItemPath


class Severity(str, Enum):
    ERROR = "Error"
    WARNING = "Warning"


class FindingKind(str, Enum):
    NODE_ADDED = "NodeAdded"
    NODE_REMOVED = "NodeRemoved"
    EDGE_ADDED = "EdgeAdded"
    EDGE_REMOVED = "EdgeRemoved"
    SCRIPT_CHANGED = "ScriptChanged"
    BINDING_CHANGED = "BindingChanged"
    METADATA_CHANGED = "MetadataChanged"


_KIND_SEVERITY = {
    FindingKind.METADATA_CHANGED: Severity.WARNING,
}


@dataclass(frozen=True)
class ValidationFinding:
    kind: FindingKind
    location: str  # node id, "src->dst" edge, "node.port", or metadata key
    detail: str

    @property
    def severity(self) -> Severity:
        return _KIND_SEVERITY.get(self.kind, Severity.ERROR)

    def to_dict(self) -> dict:
        return {
            "severity": self.severity.value,
            "kind": self.kind.value,
            "location": self.location,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class Comparator:
    mode: str  # "exact-bytes" | "numeric-tolerance" | "digest-only"
    abs_tol: float = 0.0
    rel_tol: float = 0.0

    def __post_init__(self):
        if self.mode not in ("exact-bytes", "numeric-tolerance", "digest-only"):
            raise ValueError(f"unknown comparator {self.mode!r}")
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass(frozen=True)
class Expectation:
    node: str
    port: str
    expected: DataRef
    comparator: Comparator = field(default_factory=lambda: Comparator("digest-only"))


@dataclass(frozen=True)
class ReferenceDataset:
    expectations: tuple[Expectation, ...] = ()


@dataclass(frozen=True)
class ExpectationResult:
    node: str
    port: str
    matched: bool
    observed: Optional[DataRef]
    detail: str

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "port": self.port,
            "matched": self.matched,
            "observed": model.dataref_to_dict(self.observed) if self.observed else None,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class ResultReport:
    results: tuple[ExpectationResult, ...]
    execution: Optional[ExecutionId] = None

    @property
    def overall(self) -> bool:
        return all(r.matched for r in self.results)

    def to_dict(self) -> dict:
        d = {
            "overall": self.overall,
            "results": [r.to_dict() for r in self.results],
        }
        if self.execution is not None:
            d["execution"] = {"item": str(self.execution.item), "run": self.execution.run}
        return d


@dataclass(frozen=True)
class OutcomeDiff:
    node: str
    only_in_a: tuple[str, ...] = ()
    only_in_b: tuple[str, ...] = ()
    digest_mismatch: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "onlyInA": list(self.only_in_a),
            "onlyInB": list(self.only_in_b),
            "digestMismatch": list(self.digest_mismatch),
        }


@dataclass(frozen=True)
class ComparisonReport:
    spec_findings: tuple[ValidationFinding, ...]
    outcome_diffs: tuple[OutcomeDiff, ...]
    status_a: ExecutionStatus
    status_b: ExecutionStatus

    @property
    def empty(self) -> bool:
        return not self.spec_findings and not self.outcome_diffs

    def to_dict(self) -> dict:
        return {
            "empty": self.empty,
            "spec_findings": [f.to_dict() for f in self.spec_findings],
            "outcome_diffs": [d.to_dict() for d in self.outcome_diffs],
            "status_a": self.status_a.to_dict(),
            "status_b": self.status_b.to_dict(),
        }


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------

def reconstruct_spec(kernel: ProvenanceKernel, item: ItemPath, version: int) -> WorkflowSpec:
    """The stored spec version, with post-hoc annotations merged in."""
    spec = kernel.get_spec(item, version)
    extra = kernel.annotations(item, version)
    return spec.with_annotations(extra) if extra else spec


def ancestor_closure(spec: WorkflowSpec, targets: set[str]) -> set[str]:
    closure = set(targets)
    for t in targets:
        closure |= model.ancestors(spec, t)
    return closure


def reconstruct_part(
    kernel: ProvenanceKernel, item: ItemPath, version: int, targets: set[str]
) -> WorkflowSpec:
    """Sub-spec induced by the targets and all of their ancestors."""
    if not targets:
        raise UnknownNode("target set must be non-empty")
    spec = reconstruct_spec(kernel, item, version)
    ids = spec.node_ids()
    unknown = sorted(targets - ids)
    if unknown:
        raise UnknownNode(f"unknown target nodes: {unknown}")

    keep = ancestor_closure(spec, targets)
    part = replace(
        spec,
        nodes=tuple(n for n in spec.nodes if n.id in keep),
        deps=tuple(d for d in spec.deps if d.src in keep and d.dst in keep),
        bindings=tuple(b for b in spec.bindings if b.node in keep),
        annotations=tuple(
            a for a in spec.annotations if a.target is None or a.target in keep
        ),
    )
    model.validate(part)
    return part


# ---------------------------------------------------------------------------
# Blueprint validation
# ---------------------------------------------------------------------------

def _node_scripts(spec: WorkflowSpec) -> dict[str, Optional[str]]:
    return {
        n.id: n.kind.script_ref if isinstance(n.kind, SingleKind) else None
        for n in spec.nodes
    }


def validate_spec(candidate: WorkflowSpec, blueprint: WorkflowSpec) -> list[ValidationFinding]:
    """Differences of the candidate relative to the blueprint.

    Topological differences are errors; workflow- and node-level metadata
    differences are warnings.  Annotations and version info never count.
    """
    findings: list[ValidationFinding] = []
    cand_ids, blue_ids = candidate.node_ids(), blueprint.node_ids()

    for node in sorted(cand_ids - blue_ids):
        findings.append(ValidationFinding(FindingKind.NODE_ADDED, node, "node not in blueprint"))
    for node in sorted(blue_ids - cand_ids):
        findings.append(ValidationFinding(FindingKind.NODE_REMOVED, node, "blueprint node missing"))

    cand_deps, blue_deps = set(candidate.deps), set(blueprint.deps)
    for d in sorted(cand_deps - blue_deps):
        findings.append(
            ValidationFinding(FindingKind.EDGE_ADDED, f"{d.src}->{d.dst}", "edge not in blueprint")
        )
    for d in sorted(blue_deps - cand_deps):
        findings.append(
            ValidationFinding(FindingKind.EDGE_REMOVED, f"{d.src}->{d.dst}", "blueprint edge missing")
        )

    cand_scripts, blue_scripts = _node_scripts(candidate), _node_scripts(blueprint)
    for node in sorted(cand_ids & blue_ids):
        if cand_scripts[node] != blue_scripts[node]:
            findings.append(
                ValidationFinding(
                    FindingKind.SCRIPT_CHANGED, node,
                    f"{blue_scripts[node]!r} -> {cand_scripts[node]!r}",
                )
            )

    for node in sorted(cand_ids & blue_ids):
        cn, bn = candidate.node(node), blueprint.node(node)
        if (cn.declared_inputs != bn.declared_inputs
                or cn.declared_outputs != bn.declared_outputs):
            findings.append(
                ValidationFinding(FindingKind.BINDING_CHANGED, node, "declared ports differ")
            )

    cand_bind = {(b.node, b.port): b.source for b in candidate.bindings}
    blue_bind = {(b.node, b.port): b.source for b in blueprint.bindings}
    shared_nodes = cand_ids & blue_ids
    for key in sorted(set(cand_bind) | set(blue_bind)):
        node, port = key
        if node not in shared_nodes:
            continue  # already reported as NodeAdded/NodeRemoved
        if cand_bind.get(key) != blue_bind.get(key):
            findings.append(
                ValidationFinding(FindingKind.BINDING_CHANGED, f"{node}.{port}", "binding differs")
            )

    if candidate.meta != blueprint.meta:
        keys = sorted(
            k for k in set(candidate.meta) | set(blueprint.meta)
            if candidate.meta.get(k) != blueprint.meta.get(k)
        )
        for key in keys:
            findings.append(
                ValidationFinding(
                    FindingKind.METADATA_CHANGED, key,
                    f"{blueprint.meta.get(key)!r} -> {candidate.meta.get(key)!r}",
                )
            )
    for node in sorted(cand_ids & blue_ids):
        cm, bm = candidate.node(node).meta, blueprint.node(node).meta
        if cm != bm:
            findings.append(
                ValidationFinding(FindingKind.METADATA_CHANGED, node, "node metadata differs")
            )

    findings.sort(key=lambda f: (f.kind.value, f.location))
    return findings


# ---------------------------------------------------------------------------
# Result validation
# ---------------------------------------------------------------------------

def _parse_numeric(data: bytes) -> Optional[list[float]]:
    try:
        return [float(tok) for tok in data.decode().split()]
    except (UnicodeDecodeError, ValueError):
        return None


def _compare(
    kernel: ProvenanceKernel, item: ItemPath,
    expected: DataRef, observed: DataRef, comparator: Comparator,
) -> tuple[bool, str]:
    if comparator.mode == "digest-only":
        if expected.digest == observed.digest:
            return True, "digest match"
        return False, f"digest mismatch: expected {expected.digest[:12]}, got {observed.digest[:12]}"
    payloads = kernel.payloads(item)
    want = payloads.load(expected)
    got = payloads.load(observed)
    if comparator.mode == "exact-bytes":
        return (want == got), ("bytes match" if want == got else "byte content differs")
    want_nums, got_nums = _parse_numeric(want), _parse_numeric(got)
    if want_nums is None or got_nums is None:
        return False, "payloads are not numeric vectors"
    if len(want_nums) != len(got_nums):
        return False, f"length mismatch: expected {len(want_nums)}, got {len(got_nums)}"
    for i, (w, g) in enumerate(zip(want_nums, got_nums)):
        diff = abs(w - g)
        if diff <= comparator.abs_tol or (w != 0 and diff / abs(w) <= comparator.rel_tol):
            continue
        return False, f"element {i} differs: expected {w}, got {g} (|diff|={diff:g})"
    return True, f"{len(want_nums)} elements within tolerance"


def validate_offline(
    kernel: ProvenanceKernel, execution: ExecutionId, ref: ReferenceDataset
) -> ResultReport:
    results = []
    for exp in ref.expectations:
        outcome = kernel.latest_outcome(execution, exp.node)
        if outcome is None or outcome.error is not None:
            results.append(
                ExpectationResult(exp.node, exp.port, False, None, "no outcome")
            )
            continue
        observed = outcome.output_map.get(exp.port)
        if observed is None:
            results.append(
                ExpectationResult(exp.node, exp.port, False, None,
                                  f"no output on port {exp.port!r}")
            )
            continue
        matched, detail = _compare(
            kernel, execution.item, exp.expected, observed, exp.comparator
        )
        results.append(ExpectationResult(exp.node, exp.port, matched, observed, detail))
    return ResultReport(tuple(results), execution)


def validate_online(
    kernel: ProvenanceKernel,
    item: ItemPath,
    version: int,
    inputs: dict[str, DataRef],
    ref: ReferenceDataset,
    executor: Executor,
) -> ResultReport:
    """Re-execute the pipeline, then validate the fresh execution offline."""
    execution = kernel.start_execution(item, version, inputs)
    kernel.run_to_completion(execution, executor)
    return validate_offline(kernel, execution, ref)


# ---------------------------------------------------------------------------
# Annotation search and analysis comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnnotationHit:
    item: ItemPath
    version: int
    annotation: Annotation

    def to_dict(self) -> dict:
        return {
            "item": str(self.item),
            "version": self.version,
            "annotation": model.annotation_to_dict(self.annotation),
        }


def search_annotations(
    kernel: ProvenanceKernel, query: str, tags: Optional[list[str]] = None
) -> list[AnnotationHit]:
    """Case-insensitive substring search, AND-filtered by tags."""
    needle = query.lower()
    want_tags = set(tags or ())
    hits = []
    for item in kernel.storage.list_items():
        for version in kernel.versions(item):
            spec = reconstruct_spec(kernel, item, version)
            for a in spec.annotations:
                if needle and needle not in a.text.lower():
                    continue
                if not want_tags <= set(a.tags):
                    continue
                hits.append(AnnotationHit(item, version, a))
    hits.sort(key=lambda h: (h.item, h.version, h.annotation.at))
    return hits


def compare_analyses(
    kernel: ProvenanceKernel, exec_a: ExecutionId, exec_b: ExecutionId
) -> ComparisonReport:
    spec_a = kernel.execution_spec(exec_a)
    spec_b = kernel.execution_spec(exec_b)
    findings = tuple(validate_spec(spec_a, spec_b))

    def digests(execution: ExecutionId, node: str) -> Optional[dict[str, str]]:
        outcome = kernel.latest_outcome(execution, node)
        if outcome is None or outcome.error is not None:
            return None
        return {p: r.digest for p, r in outcome.outputs}

    diffs = []
    for node in sorted(spec_a.node_ids() | spec_b.node_ids()):
        da = digests(exec_a, node) if node in spec_a.node_ids() else None
        db = digests(exec_b, node) if node in spec_b.node_ids() else None
        if da is None and db is None:
            continue
        if db is None:
            diffs.append(OutcomeDiff(node, only_in_a=tuple(sorted(da))))
            continue
        if da is None:
            diffs.append(OutcomeDiff(node, only_in_b=tuple(sorted(db))))
            continue
        only_a = tuple(sorted(set(da) - set(db)))
        only_b = tuple(sorted(set(db) - set(da)))
        mismatch = tuple(
            sorted(p for p in set(da) & set(db) if da[p] != db[p])
        )
        if only_a or only_b or mismatch:
            diffs.append(OutcomeDiff(node, only_a, only_b, mismatch))

    return ComparisonReport(
        findings, tuple(diffs),
        kernel.execution_status(exec_a), kernel.execution_status(exec_b),
    )


# ---------------------------------------------------------------------------
# refset.v1 JSON
# ---------------------------------------------------------------------------

def comparator_from_dict(d: dict) -> Comparator:
    mode = d.get("mode", "digest-only")
    return Comparator(mode, float(d.get("abs", 0.0)), float(d.get("rel", 0.0)))


def refset_from_dict(d: dict) -> ReferenceDataset:
    if d.get("format", "refset.v1") != "refset.v1":
        raise ValueError(f"unsupported refset format {d.get('format')!r}")
    exps = []
    for e in d.get("expectations", ()):
        exps.append(
            Expectation(
                node=e["node"],
                port=e["port"],
                expected=model.dataref_from_dict(e["expected"]),
                comparator=comparator_from_dict(e.get("comparator", {})),
            )
        )
    return ReferenceDataset(tuple(exps))


def refset_to_dict(ref: ReferenceDataset) -> dict:
    return {
        "format": "refset.v1",
        "expectations": [
            {
                "node": e.node,
                "port": e.port,
                "expected": model.dataref_to_dict(e.expected),
                "comparator": {
                    "mode": e.comparator.mode,
                    "abs": e.comparator.abs_tol,
                    "rel": e.comparator.rel_tol,
                },
            }
            for e in ref.expectations
        ],
    }
