"""The description-driven provenance core.

Each workflow is captured as an Item: a container of properties, immutable
spec versions, agents, append-only events, outcomes, views and collections,
all persisted through a ClusterStorage backend.  Execution state is never
stored directly; it is always reconstructed by replaying the event log, so
the log is the single source of truth.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Optional, Protocol

from . import model
from .errors import (
    AlreadyExists,
    InvalidTransition,
    MissingInput,
    NotEligible,
    NotFound,
    OutcomeMissing,
    OutcomeUnexpected,
    PayloadUnavailable,
    UnknownAgent,
    UnknownExecution,
    UnknownItem,
    UnknownVersion,
)
from .model import Annotation, DataRef, WorkflowSpec, utcnow
from .paths import ClusterKind, ClusterPath, ItemPath
from .storage import ClusterStorage, StoredDocument
from .xmldocs import decode_document, encode_document


def encode_segment(text: str) -> str:
    """Render an arbitrary identifier as a legal path segment."""
    out = []
    for ch in text:
        if ch.isalnum() or ch in "_-":
            out.append(ch)
        else:
            out.append(f".{ord(ch):02x}")
    return "".join(out)


def _run_seg(run: int) -> str:
    return f"{run:04d}"


def _seq_seg(seq: int) -> str:
    return f"{seq:06d}"


def _version_seg(version: int) -> str:
    return f"{version:04d}"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentDesc:
    agent_id: str
    description: str = ""
    capabilities: tuple[tuple[str, str], ...] = ()

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "description": self.description,
            "capabilities": dict(self.capabilities),
        }

    @staticmethod
    def from_dict(d: dict) -> "AgentDesc":
        return AgentDesc(
            d["agent_id"], d.get("description", ""),
            tuple(sorted(d.get("capabilities", {}).items())),
        )


class ActivityState(str, Enum):
    WAITING = "Waiting"
    STARTED = "Started"
    SUSPENDED = "Suspended"
    INTERRUPTED = "Interrupted"
    COMPLETE = "Complete"
    FAILED = "Failed"


TERMINAL_STATES = frozenset(
    {ActivityState.INTERRUPTED, ActivityState.COMPLETE, ActivityState.FAILED}
)


class Transition(str, Enum):
    START = "Start"
    SUSPEND = "Suspend"
    RESUME = "Resume"
    COMPLETE_OK = "CompleteOk"
    FAIL = "Fail"
    INTERRUPT = "Interrupt"


_TRANSITION_TABLE: dict[tuple[ActivityState, Transition], ActivityState] = {
    (ActivityState.WAITING, Transition.START): ActivityState.STARTED,
    (ActivityState.STARTED, Transition.SUSPEND): ActivityState.SUSPENDED,
    (ActivityState.SUSPENDED, Transition.RESUME): ActivityState.STARTED,
    (ActivityState.STARTED, Transition.COMPLETE_OK): ActivityState.COMPLETE,
    (ActivityState.STARTED, Transition.FAIL): ActivityState.FAILED,
    (ActivityState.WAITING, Transition.INTERRUPT): ActivityState.INTERRUPTED,
    (ActivityState.STARTED, Transition.INTERRUPT): ActivityState.INTERRUPTED,
    (ActivityState.SUSPENDED, Transition.INTERRUPT): ActivityState.INTERRUPTED,
}

#: Transitions that must carry an outcome.
OUTCOME_TRANSITIONS = frozenset({Transition.COMPLETE_OK, Transition.FAIL})


def apply_transition(state: ActivityState, t: Transition) -> ActivityState:
    """Advance one activity state by the fixed transition table."""
    try:
        return _TRANSITION_TABLE[(state, t)]
    except KeyError:
        raise InvalidTransition(f"{t.value} is not legal from {state.value}") from None


@dataclass(frozen=True)
class Outcome:
    outputs: tuple[tuple[str, DataRef], ...] = ()
    log: str = ""
    error: Optional[tuple[str, str]] = None  # (code, message)

    @property
    def output_map(self) -> dict[str, DataRef]:
        return dict(self.outputs)

    def to_dict(self) -> dict:
        return {
            "outputs": {p: model.dataref_to_dict(r) for p, r in self.outputs},
            "log": self.log,
            "error": {"code": self.error[0], "message": self.error[1]} if self.error else None,
        }

    @staticmethod
    def from_dict(d: dict) -> "Outcome":
        err = d.get("error")
        return Outcome(
            outputs=tuple(
                sorted((p, model.dataref_from_dict(r)) for p, r in d.get("outputs", {}).items())
            ),
            log=d.get("log", ""),
            error=(err["code"], err["message"]) if err else None,
        )


@dataclass(frozen=True, order=True)
class ExecutionId:
    item: ItemPath
    run: int

    def __str__(self) -> str:
        return f"{self.item}:{self.run}"


@dataclass(frozen=True)
class Event:
    item: ItemPath
    seq: int
    run: int
    node: str
    transition: Transition
    agent: str
    at: datetime
    outcome_path: Optional[ClusterPath] = None

    def to_dict(self) -> dict:
        d = {
            "seq": self.seq,
            "run": self.run,
            "node": self.node,
            "transition": self.transition.value,
            "agent": self.agent,
            "at": model._ts(self.at),
        }
        if self.outcome_path is not None:
            d["outcome_path"] = model._cluster_path_dict(self.outcome_path)
        return d

    @staticmethod
    def from_dict(item: ItemPath, d: dict) -> "Event":
        return Event(
            item=item,
            seq=int(d["seq"]),
            run=int(d["run"]),
            node=d["node"],
            transition=Transition(d["transition"]),
            agent=d["agent"],
            at=model._parse_ts(d["at"]),
            outcome_path=model._cluster_path_from(d["outcome_path"])
            if d.get("outcome_path")
            else None,
        )


class RunStatus(str, Enum):
    RUNNING = "Running"
    SUCCEEDED = "Succeeded"
    FAILED = "Failed"
    INTERRUPTED = "Interrupted"


@dataclass(frozen=True)
class ExecutionStatus:
    status: RunStatus
    node_states: tuple[tuple[str, ActivityState], ...]

    @property
    def states(self) -> dict[str, ActivityState]:
        return dict(self.node_states)

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "nodes": {n: s.value for n, s in self.node_states},
        }


class Executor(Protocol):
    """What the kernel needs from an executor backend."""

    agent: AgentDesc

    def run(
        self,
        script_ref: str,
        node: str,
        run: int,
        inputs: dict[str, DataRef],
        payloads: "PayloadStore",
    ) -> Outcome: ...


class PayloadStore:
    """Content-addressed payload access for one Item's collection cluster."""

    def __init__(self, storage: ClusterStorage, item: ItemPath):
        self._storage = storage
        self._item = item

    def save(self, name: str, data: bytes, media_hint: str = "bytes") -> DataRef:
        digest = model.digest_bytes(data)
        path = ClusterPath(self._item, ClusterKind.COLLECTION, f"payloads/{digest}")
        body = encode_document(
            "collection",
            {"kind": "payload", "digest": digest,
             "media_hint": media_hint,
             "data_b64": base64.b64encode(data).decode()},
        )
        try:
            self._storage.put(StoredDocument(path, body), expected_absent=True)
        except AlreadyExists:
            pass  # identical content already stored
        return DataRef(name, digest, len(data), media_hint, path)

    def load(self, ref: DataRef) -> bytes:
        if ref.payload_path is None:
            raise PayloadUnavailable(f"DataRef {ref.name!r} carries no stored payload")
        try:
            doc = self._storage.get(ref.payload_path)
        except NotFound:
            raise PayloadUnavailable(f"payload missing at {ref.payload_path}") from None
        payload = decode_document(doc.body, "collection")
        return base64.b64decode(payload["data_b64"])


class ProvenanceKernel:
    """Item lifecycle, event capture and task-by-task execution."""

    def __init__(self, storage: ClusterStorage):
        self.storage = storage
        # workflow versions and events are immutable once written, so their
        # decoded forms can be cached for the lifetime of the kernel
        self._spec_cache: dict[tuple[ItemPath, int], WorkflowSpec] = {}
        self._event_cache: dict[tuple[ItemPath, str], Event] = {}

    # -- helpers -----------------------------------------------------------

    def payloads(self, item: ItemPath) -> PayloadStore:
        return PayloadStore(self.storage, item)

    def _require_item(self, item: ItemPath) -> dict:
        try:
            doc = self.storage.get(ClusterPath(item, ClusterKind.PROPERTY, "item"))
        except NotFound:
            raise UnknownItem(f"no item {item}") from None
        return decode_document(doc.body, "property")

    def _spec_path(self, item: ItemPath, version: int) -> ClusterPath:
        return ClusterPath(item, ClusterKind.WORKFLOW, f"versions/{_version_seg(version)}")

    def _write_version(self, item: ItemPath, spec: WorkflowSpec) -> None:
        body = encode_document("workflow", model.spec_to_dict(spec))
        self.storage.put(
            StoredDocument(self._spec_path(item, spec.version_info.version), body),
            expected_absent=True,
        )

    # -- items and versions ------------------------------------------------

    def create_item(self, spec: WorkflowSpec, agents: list[AgentDesc]) -> ItemPath:
        if not agents:
            raise UnknownAgent("an item needs at least one registered agent")
        flat = model.flatten(spec)
        item = ItemPath.new()
        versioned = model.WorkflowSpec(
            name=flat.name,
            version_info=model.VersionInfo(version=1, parent=None, note=flat.version_info.note),
            nodes=flat.nodes,
            deps=flat.deps,
            bindings=flat.bindings,
            annotations=flat.annotations,
            metadata=flat.metadata,
        )
        self._write_version(item, versioned)
        props = {"name": spec.name, "created_at": model._ts(utcnow())}
        self.storage.put(
            StoredDocument(
                ClusterPath(item, ClusterKind.PROPERTY, "item"),
                encode_document("property", props),
            )
        )
        for agent in agents:
            self.storage.put(
                StoredDocument(
                    ClusterPath(item, ClusterKind.AGENT, f"agents/{encode_segment(agent.agent_id)}"),
                    encode_document("agent", agent.to_dict()),
                )
            )
        return item

    def register_agent(self, item: ItemPath, agent: AgentDesc) -> None:
        self._require_item(item)
        self.storage.put(
            StoredDocument(
                ClusterPath(item, ClusterKind.AGENT, f"agents/{encode_segment(agent.agent_id)}"),
                encode_document("agent", agent.to_dict()),
            )
        )

    def agents(self, item: ItemPath) -> list[AgentDesc]:
        self._require_item(item)
        out = []
        for p in self.storage.list(item, ClusterKind.AGENT, "agents/"):
            out.append(AgentDesc.from_dict(decode_document(self.storage.get(p).body, "agent")))
        return out

    def versions(self, item: ItemPath) -> list[int]:
        self._require_item(item)
        paths = self.storage.list(item, ClusterKind.WORKFLOW, "versions/")
        return [int(p.path.rsplit("/", 1)[1]) for p in paths]

    def get_spec(self, item: ItemPath, version: int) -> WorkflowSpec:
        cached = self._spec_cache.get((item, version))
        if cached is not None:
            return cached
        self._require_item(item)
        try:
            doc = self.storage.get(self._spec_path(item, version))
        except NotFound:
            raise UnknownVersion(f"item {item} has no version {version}") from None
        spec = model.spec_from_dict(decode_document(doc.body, "workflow"))
        self._spec_cache[(item, version)] = spec
        return spec

    def derive_version(self, item: ItemPath, edit: WorkflowSpec, note: str = "") -> int:
        existing = self.versions(item)
        latest = max(existing)
        flat = model.flatten(edit)
        version = latest + 1
        versioned = model.WorkflowSpec(
            name=flat.name,
            version_info=model.VersionInfo(version=version, parent=latest, note=note),
            nodes=flat.nodes,
            deps=flat.deps,
            bindings=flat.bindings,
            annotations=flat.annotations,
            metadata=flat.metadata,
        )
        self._write_version(item, versioned)
        return version

    # -- annotations -------------------------------------------------------

    def annotate(self, item: ItemPath, version: int, annotation: Annotation) -> None:
        if version not in self.versions(item):
            raise UnknownVersion(f"item {item} has no version {version}")
        if annotation.target is not None:
            spec = self.get_spec(item, version)
            if annotation.target not in spec.node_ids():
                raise model.UnknownNode(
                    f"annotation targets unknown node {annotation.target!r}"
                )
        prefix = f"annotations/{_version_seg(version)}/"
        n = len(self.storage.list(item, ClusterKind.COLLECTION, prefix)) + 1
        self.storage.put(
            StoredDocument(
                ClusterPath(item, ClusterKind.COLLECTION, f"{prefix}{_seq_seg(n)}"),
                encode_document("collection", {
                    "kind": "annotation",
                    "annotation": model.annotation_to_dict(annotation),
                }),
            ),
            expected_absent=True,
        )

    def annotations(self, item: ItemPath, version: int) -> list[Annotation]:
        """Annotations appended after the version was stored, in order."""
        if version not in self.versions(item):
            raise UnknownVersion(f"item {item} has no version {version}")
        prefix = f"annotations/{_version_seg(version)}/"
        out = []
        for p in self.storage.list(item, ClusterKind.COLLECTION, prefix):
            payload = decode_document(self.storage.get(p).body, "collection")
            out.append(model.annotation_from_dict(payload["annotation"]))
        return out

    # -- executions --------------------------------------------------------

    def _run_prop_path(self, item: ItemPath, run: int) -> ClusterPath:
        return ClusterPath(item, ClusterKind.PROPERTY, f"executions/{_run_seg(run)}")

    def executions(self, item: ItemPath) -> list[int]:
        self._require_item(item)
        paths = self.storage.list(item, ClusterKind.PROPERTY, "executions/")
        return [int(p.path.rsplit("/", 1)[1]) for p in paths]

    def _run_record(self, execution: ExecutionId) -> dict:
        try:
            doc = self.storage.get(self._run_prop_path(execution.item, execution.run))
        except NotFound:
            raise UnknownExecution(f"no execution {execution}") from None
        return decode_document(doc.body, "property")

    def execution_spec(self, execution: ExecutionId) -> WorkflowSpec:
        record = self._run_record(execution)
        return self.get_spec(execution.item, int(record["version"]))

    def execution_inputs(self, execution: ExecutionId) -> dict[str, DataRef]:
        record = self._run_record(execution)
        return {
            name: model.dataref_from_dict(d) for name, d in record["inputs"].items()
        }

    def start_execution(
        self, item: ItemPath, version: int, inputs: dict[str, DataRef]
    ) -> ExecutionId:
        spec = self.get_spec(item, version)
        for b in spec.bindings:
            if isinstance(b.source, model.ExternalSource):
                if b.source.name not in inputs and b.source.pinned is None:
                    raise MissingInput(
                        f"external input {b.source.name!r} (for {b.node}.{b.port}) not supplied"
                    )
        run = len(self.executions(item)) + 1
        record = {
            "version": version,
            "run": run,
            "started_at": model._ts(utcnow()),
            "head": model.head_node(spec),
            "inputs": {name: model.dataref_to_dict(r) for name, r in inputs.items()},
        }
        self.storage.put(
            StoredDocument(
                self._run_prop_path(item, run),
                encode_document("property", record),
            ),
            expected_absent=True,
        )
        return ExecutionId(item, run)

    # -- event log ---------------------------------------------------------

    def _all_events(self, item: ItemPath) -> list[Event]:
        out = []
        for p in self.storage.list(item, ClusterKind.EVENT, "events/"):
            out.append(Event.from_dict(item, decode_document(self.storage.get(p).body, "event")))
        out.sort(key=lambda e: e.seq)
        return out

    def trace(self, execution: ExecutionId) -> list[Event]:
        self._run_record(execution)
        prefix = f"events/{_run_seg(execution.run)}/"
        out = []
        for p in self.storage.list(execution.item, ClusterKind.EVENT, prefix):
            event = self._event_cache.get((execution.item, p.path))
            if event is None:
                event = Event.from_dict(
                    execution.item, decode_document(self.storage.get(p).body, "event")
                )
                self._event_cache[(execution.item, p.path)] = event
            out.append(event)
        out.sort(key=lambda e: e.seq)
        return out

    def _next_seq(self, item: ItemPath) -> int:
        return len(self.storage.list(item, ClusterKind.EVENT, "events/")) + 1

    def replay_states(
        self, spec: WorkflowSpec, events: list[Event]
    ) -> dict[str, ActivityState]:
        """Pure event-sourcing fold: event log -> per-node state map."""
        states = {n.id: ActivityState.WAITING for n in spec.nodes}
        for ev in events:
            states[ev.node] = apply_transition(states[ev.node], ev.transition)
        return states

    def node_states(self, execution: ExecutionId) -> dict[str, ActivityState]:
        spec = self.execution_spec(execution)
        return self.replay_states(spec, self.trace(execution))

    def eligible_nodes(self, execution: ExecutionId) -> set[str]:
        spec = self.execution_spec(execution)
        states = self.replay_states(spec, self.trace(execution))
        eligible = set()
        for node_id, state in states.items():
            if state is not ActivityState.WAITING:
                continue
            preds = model.predecessors(spec, node_id)
            if all(states[p] is ActivityState.COMPLETE for p in preds):
                eligible.add(node_id)
        return eligible

    def execution_status(self, execution: ExecutionId) -> ExecutionStatus:
        spec = self.execution_spec(execution)
        states = self.replay_states(spec, self.trace(execution))
        values = set(states.values())
        if values == {ActivityState.COMPLETE}:
            status = RunStatus.SUCCEEDED
        elif (
            self.eligible_nodes(execution)
            or ActivityState.STARTED in values
            or ActivityState.SUSPENDED in values
        ):
            status = RunStatus.RUNNING
        elif ActivityState.FAILED in values:
            status = RunStatus.FAILED
        elif ActivityState.INTERRUPTED in values:
            status = RunStatus.INTERRUPTED
        else:
            status = RunStatus.RUNNING
        return ExecutionStatus(status, tuple(sorted(states.items())))

    def _outcome_view_path(self, item: ItemPath, run: int, node: str) -> ClusterPath:
        return ClusterPath(
            item, ClusterKind.VIEW,
            f"latest-outcome/{_run_seg(run)}/{encode_segment(node)}",
        )

    def latest_outcome(self, execution: ExecutionId, node: str) -> Optional[Outcome]:
        self._run_record(execution)
        try:
            view = self.storage.get(
                self._outcome_view_path(execution.item, execution.run, node)
            )
        except NotFound:
            return None
        target = model._cluster_path_from(decode_document(view.body, "view")["target"])
        return Outcome.from_dict(decode_document(self.storage.get(target).body, "outcome"))

    def record_transition(
        self,
        execution: ExecutionId,
        node: str,
        t: Transition,
        agent: str,
        outcome: Optional[Outcome] = None,
    ) -> Event:
        spec = self.execution_spec(execution)
        if node not in spec.node_ids():
            raise model.UnknownNode(f"no node {node!r} in execution {execution}")
        known = {a.agent_id for a in self.agents(execution.item)}
        if agent not in known:
            raise UnknownAgent(f"agent {agent!r} is not registered with item {execution.item}")

        if t in OUTCOME_TRANSITIONS and outcome is None:
            raise OutcomeMissing(f"{t.value} requires an outcome")
        if t not in OUTCOME_TRANSITIONS and outcome is not None:
            raise OutcomeUnexpected(f"{t.value} must not carry an outcome")
        if t is Transition.FAIL and outcome is not None and outcome.error is None:
            raise OutcomeMissing("Fail outcome must carry an error")
        if t is Transition.COMPLETE_OK and outcome is not None and outcome.error is not None:
            raise OutcomeUnexpected("CompleteOk outcome must not carry an error")

        states = self.replay_states(spec, self.trace(execution))
        apply_transition(states[node], t)  # raises InvalidTransition if illegal
        if t is Transition.START and node not in self.eligible_nodes(execution):
            raise NotEligible(
                f"node {node!r} has incomplete predecessors in execution {execution}"
            )

        seq = self._next_seq(execution.item)
        outcome_path = None
        if outcome is not None:
            outcome_path = ClusterPath(
                execution.item,
                ClusterKind.OUTCOME,
                f"outcomes/{_run_seg(execution.run)}/{encode_segment(node)}/{_seq_seg(seq)}",
            )
            self.storage.put(
                StoredDocument(outcome_path, encode_document("outcome", outcome.to_dict())),
                expected_absent=True,
            )

        event = Event(
            item=execution.item,
            seq=seq,
            run=execution.run,
            node=node,
            transition=t,
            agent=agent,
            at=utcnow(),
            outcome_path=outcome_path,
        )
        self.storage.put(
            StoredDocument(
                ClusterPath(
                    execution.item,
                    ClusterKind.EVENT,
                    f"events/{_run_seg(execution.run)}/{_seq_seg(seq)}",
                ),
                encode_document("event", event.to_dict()),
            ),
            expected_absent=True,
        )
        if outcome_path is not None:
            self.storage.put(
                StoredDocument(
                    self._outcome_view_path(execution.item, execution.run, node),
                    encode_document("view", {"target": model._cluster_path_dict(outcome_path)}),
                )
            )
        return event

    # -- driving a run -----------------------------------------------------

    def resolve_inputs(self, execution: ExecutionId, node: str) -> dict[str, DataRef]:
        """Materialize a node's input ports from run inputs and upstream outcomes."""
        spec = self.execution_spec(execution)
        run_inputs = self.execution_inputs(execution)
        resolved: dict[str, DataRef] = {}
        for b in spec.bindings:
            if b.node != node:
                continue
            if isinstance(b.source, model.ExternalSource):
                ref = run_inputs.get(b.source.name, b.source.pinned)
                if ref is None:
                    raise MissingInput(f"external input {b.source.name!r} unavailable")
                resolved[b.port] = ref
            else:
                upstream = self.latest_outcome(execution, b.source.node)
                if upstream is None:
                    raise MissingInput(
                        f"{node}.{b.port} needs output of {b.source.node!r}, which has no outcome"
                    )
                try:
                    resolved[b.port] = upstream.output_map[b.source.port]
                except KeyError:
                    raise MissingInput(
                        f"upstream {b.source.node!r} produced no port {b.source.port!r}"
                    ) from None
        return resolved

    def run_to_completion(self, execution: ExecutionId, executor: Executor) -> ExecutionStatus:
        spec = self.execution_spec(execution)
        payloads = self.payloads(execution.item)
        while True:
            eligible = sorted(self.eligible_nodes(execution))
            if not eligible:
                break
            node_id = eligible[0]
            node = spec.node(node_id)
            assert isinstance(node.kind, model.SingleKind)  # lifecycle specs are flat
            inputs = self.resolve_inputs(execution, node_id)
            self.record_transition(execution, node_id, Transition.START, executor.agent.agent_id)
            try:
                outcome = executor.run(
                    node.kind.script_ref, node_id, execution.run, inputs, payloads
                )
            except Exception as exc:  # executor faults become Fail events
                outcome = Outcome(log=f"executor error: {exc}", error=("EXECUTOR_ERROR", str(exc)))
            if outcome.error is None:
                self.record_transition(
                    execution, node_id, Transition.COMPLETE_OK,
                    executor.agent.agent_id, outcome,
                )
            else:
                self.record_transition(
                    execution, node_id, Transition.FAIL,
                    executor.agent.agent_id, outcome,
                )
        return self.execution_status(execution)
