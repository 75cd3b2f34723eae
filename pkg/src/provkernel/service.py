"""HTTP/JSON provenance service.

Exposes capture, query, reconstruction, validation and OPM interchange over
the same kernel the CLI drives, plus raw /storage endpoints so the remote
storage backend is just another client of the same protocol.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import analysis, model, opm
from .errors import BadRequest, ConfigError, NotFound, ProvError
from .executor import SimulatedGridExecutor, executor_from_dict, load_executor_config
from .kernel import (
    AgentDesc,
    Event,
    ExecutionId,
    Outcome,
    ProvenanceKernel,
    Transition,
)
from .paths import ClusterKind, ClusterPath, ItemPath
from .storage import (
    ClusterStorage,
    FileStorage,
    MemoryStorage,
    RemoteStorage,
    StoredDocument,
)


@dataclass
class ServiceConfig:
    listen: str = "127.0.0.1:8462"
    backend: str = "memory"  # "memory" | "file" | "remote"
    file_root: Optional[str] = None
    remote_url: Optional[str] = None
    executor_config: Optional[str] = None
    log_level: str = "info"

    @staticmethod
    def from_dict(d: dict) -> "ServiceConfig":
        storage = d.get("storage", {})
        backend = storage.get("backend", "memory")
        if backend not in ("memory", "file", "remote"):
            raise ConfigError(f"unknown storage backend {backend!r}")
        if backend == "file" and not storage.get("root"):
            raise ConfigError("file backend requires storage.root")
        if backend == "remote" and not storage.get("base_url"):
            raise ConfigError("remote backend requires storage.base_url")
        return ServiceConfig(
            listen=d.get("listen", "127.0.0.1:8462"),
            backend=backend,
            file_root=storage.get("root"),
            remote_url=storage.get("base_url"),
            executor_config=d.get("executor"),
            log_level=d.get("log_level", "info"),
        )

    @staticmethod
    def load(path: str | Path) -> "ServiceConfig":
        try:
            return ServiceConfig.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc

    def open_storage(self) -> ClusterStorage:
        if self.backend == "memory":
            return MemoryStorage()
        if self.backend == "file":
            return FileStorage(self.file_root)
        return RemoteStorage(self.remote_url)

    def open_executor(self) -> SimulatedGridExecutor:
        if self.executor_config:
            return load_executor_config(self.executor_config)
        return SimulatedGridExecutor()


def decode_inputs(kernel: ProvenanceKernel, item: ItemPath, raw: dict) -> dict:
    """Store inline payloads ({text|base64|numbers}) and return DataRefs."""
    payloads = kernel.payloads(item)
    refs = {}
    for name, entry in raw.items():
        if not isinstance(entry, dict):
            raise BadRequest(f"input {name!r} must be an object")
        if "text" in entry:
            data, hint = entry["text"].encode(), "text"
        elif "base64" in entry:
            data, hint = base64.b64decode(entry["base64"]), "bytes"
        elif "numbers" in entry:
            data = " ".join(f"{float(v):.6f}" for v in entry["numbers"]).encode()
            hint = "numeric-vector"
        else:
            raise BadRequest(f"input {name!r} needs one of: text, base64, numbers")
        refs[name] = payloads.save(name, data, hint)
    return refs


def event_to_json(e: Event) -> dict:
    return {
        "seq": e.seq,
        "run": e.run,
        "node": e.node,
        "transition": e.transition.value,
        "agent": e.agent,
        "at": model._ts(e.at),
        "outcome_path": str(e.outcome_path) if e.outcome_path else None,
    }


def _outcome_from_json(kernel: ProvenanceKernel, item: ItemPath, raw: dict) -> Outcome:
    refs = decode_inputs(kernel, item, raw.get("outputs", {}))
    err = raw.get("error")
    return Outcome(
        outputs=tuple(sorted(refs.items())),
        log=raw.get("log", ""),
        error=(err["code"], err.get("message", "")) if err else None,
    )


def _pick_executor(default: SimulatedGridExecutor, body: dict) -> SimulatedGridExecutor:
    if "executor" in body:
        return executor_from_dict(body["executor"])
    return default


def create_app(
    storage: Optional[ClusterStorage] = None,
    executor: Optional[SimulatedGridExecutor] = None,
) -> FastAPI:
    storage = storage if storage is not None else MemoryStorage()
    executor = executor if executor is not None else SimulatedGridExecutor()
    kernel = ProvenanceKernel(storage)
    app = FastAPI(title="provkernel", docs_url=None, redoc_url=None)
    app.state.kernel = kernel

    @app.exception_handler(ProvError)
    async def _domain_error(request: Request, exc: ProvError):
        return JSONResponse(
            status_code=exc.http_status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    def _item(item_id: str) -> ItemPath:
        try:
            return ItemPath.parse(item_id)
        except ProvError:
            raise NotFound(f"no item {item_id!r}") from None

    # -- items and versions ------------------------------------------------

    @app.post("/items", status_code=201)
    def create_item(body: dict = Body(...)):
        try:
            spec = model.spec_from_dict(body["spec"])
        except KeyError:
            raise BadRequest("body must carry a workflow.v1 'spec'") from None
        agents = [AgentDesc.from_dict(a) for a in body.get("agents", [])]
        if not agents:
            agents = [AgentDesc("sim-ce-1", "simulated compute element")]
        item = kernel.create_item(spec, agents)
        return {"item": str(item)}

    @app.get("/items/{item_id}")
    def get_item(item_id: str):
        item = _item(item_id)
        props = kernel._require_item(item)
        return {
            "item": str(item),
            "name": props.get("name"),
            "created_at": props.get("created_at"),
            "versions": kernel.versions(item),
            "executions": kernel.executions(item),
            "agents": [a.to_dict() for a in kernel.agents(item)],
        }

    @app.post("/items/{item_id}/versions", status_code=201)
    def derive_version(item_id: str, body: dict = Body(...)):
        item = _item(item_id)
        spec = model.spec_from_dict(body["spec"])
        version = kernel.derive_version(item, spec, body.get("note", ""))
        return {"version": version}

    @app.get("/items/{item_id}/reconstruct")
    def reconstruct(item_id: str, version: int, nodes: str = ""):
        item = _item(item_id)
        if nodes:
            targets = {n for n in nodes.split(",") if n}
            spec = analysis.reconstruct_part(kernel, item, version, targets)
        else:
            spec = analysis.reconstruct_spec(kernel, item, version)
        return model.spec_to_dict(spec)

    # -- executions --------------------------------------------------------

    @app.post("/items/{item_id}/executions", status_code=201)
    def start_execution(item_id: str, body: dict = Body(...)):
        item = _item(item_id)
        version = int(body.get("version", max(kernel.versions(item))))
        inputs = decode_inputs(kernel, item, body.get("inputs", {}))
        execution = kernel.start_execution(item, version, inputs)
        result = {"item": str(item), "run": execution.run}
        if body.get("execute", False):
            status = kernel.run_to_completion(execution, _pick_executor(executor, body))
            result["status"] = status.to_dict()
        return result

    @app.get("/executions/{item_id}/{run}")
    def execution_status(item_id: str, run: int):
        execution = ExecutionId(_item(item_id), run)
        return kernel.execution_status(execution).to_dict()

    @app.get("/executions/{item_id}/{run}/trace")
    def trace(item_id: str, run: int):
        execution = ExecutionId(_item(item_id), run)
        return {"events": [event_to_json(e) for e in kernel.trace(execution)]}

    @app.post("/executions/{item_id}/{run}/events", status_code=201)
    def capture_event(item_id: str, run: int, body: dict = Body(...)):
        execution = ExecutionId(_item(item_id), run)
        try:
            transition = Transition(body["transition"])
        except (KeyError, ValueError):
            raise BadRequest(f"unknown transition {body.get('transition')!r}") from None
        outcome = None
        if body.get("outcome") is not None:
            if not isinstance(body["outcome"], dict):
                raise BadRequest("outcome must be an object")
            outcome = _outcome_from_json(kernel, execution.item, body["outcome"])
        event = kernel.record_transition(
            execution, body.get("node", ""), transition, body.get("agent", ""), outcome
        )
        return event_to_json(event)

    # -- validation --------------------------------------------------------

    @app.post("/validate/spec")
    def validate_spec(body: dict = Body(...)):
        candidate = model.spec_from_dict(body["candidate"])
        blueprint = model.spec_from_dict(body["blueprint"])
        findings = analysis.validate_spec(candidate, blueprint)
        return {"findings": [f.to_dict() for f in findings], "ok": not findings}

    @app.post("/validate/offline")
    def validate_offline(body: dict = Body(...)):
        execution = ExecutionId(_item(body["item"]), int(body["run"]))
        ref = analysis.refset_from_dict(body["ref"])
        return analysis.validate_offline(kernel, execution, ref).to_dict()

    @app.post("/validate/online")
    def validate_online(body: dict = Body(...)):
        item = _item(body["item"])
        version = int(body.get("version", max(kernel.versions(item))))
        inputs = decode_inputs(kernel, item, body.get("inputs", {}))
        ref = analysis.refset_from_dict(body["ref"])
        report = analysis.validate_online(
            kernel, item, version, inputs, ref, _pick_executor(executor, body)
        )
        return report.to_dict()

    # -- annotations, comparison, OPM --------------------------------------

    @app.post("/items/{item_id}/annotations", status_code=201)
    def annotate(item_id: str, body: dict = Body(...)):
        item = _item(item_id)
        version = int(body.get("version", max(kernel.versions(item))))
        annotation = model.Annotation(
            author=body.get("author", "anonymous"),
            at=model.utcnow(),
            text=body.get("text", ""),
            tags=tuple(body.get("tags", ())),
            target=body.get("target"),
        )
        kernel.annotate(item, version, annotation)
        return {"item": str(item), "version": version}

    @app.get("/search/annotations")
    def search(q: str = "", tags: str = ""):
        tag_list = [t for t in tags.split(",") if t]
        hits = analysis.search_annotations(kernel, q, tag_list)
        return {"hits": [h.to_dict() for h in hits]}

    @app.get("/compare")
    def compare(a: str, b: str):
        def parse(ref: str) -> ExecutionId:
            try:
                item_id, run = ref.rsplit(":", 1)
                return ExecutionId(_item(item_id), int(run))
            except ValueError:
                raise BadRequest(f"execution reference must be item:run, got {ref!r}") from None

        report = analysis.compare_analyses(kernel, parse(a), parse(b))
        return report.to_dict()

    @app.get("/items/{item_id}/opm")
    def export_opm(item_id: str, run: int):
        execution = ExecutionId(_item(item_id), run)
        graph = opm.to_opm(kernel, execution)
        return Response(content=opm.export_xml(graph), media_type="application/xml")

    @app.post("/opm/import")
    async def import_opm(request: Request):
        graph = opm.import_xml(await request.body())
        return {"nodes": len(graph.nodes), "edges": len(graph.edges)}

    # -- raw storage (what RemoteStorage speaks) ---------------------------

    @app.get("/storage")
    def storage_items():
        return {"items": [str(i) for i in storage.list_items()]}

    @app.get("/storage/{item_id}/{kind}")
    def storage_list(item_id: str, kind: str, prefix: str = ""):
        try:
            ck = ClusterKind(kind)
        except ValueError:
            raise BadRequest(f"unknown cluster kind {kind!r}") from None
        paths = storage.list(_item(item_id), ck, prefix)
        return {"paths": [p.path for p in paths]}

    @app.get("/storage/{item_id}/{kind}/{path:path}")
    def storage_get(item_id: str, kind: str, path: str):
        try:
            ck = ClusterKind(kind)
        except ValueError:
            raise BadRequest(f"unknown cluster kind {kind!r}") from None
        doc = storage.get(ClusterPath(_item(item_id), ck, path))
        return Response(content=doc.body, media_type="application/xml")

    @app.put("/storage/{item_id}/{kind}/{path:path}", status_code=201)
    async def storage_put(
        item_id: str, kind: str, path: str, request: Request,
        expected_absent: bool = False,
    ):
        try:
            ck = ClusterKind(kind)
        except ValueError:
            raise BadRequest(f"unknown cluster kind {kind!r}") from None
        body = await request.body()
        storage.put(
            StoredDocument(ClusterPath(_item(item_id), ck, path), body),
            expected_absent=expected_absent,
        )
        return {"stored": path}

    @app.delete("/storage/{item_id}/{kind}/{path:path}", status_code=204)
    def storage_delete(item_id: str, kind: str, path: str):
        try:
            ck = ClusterKind(kind)
        except ValueError:
            raise BadRequest(f"unknown cluster kind {kind!r}") from None
        storage.delete(ClusterPath(_item(item_id), ck, path))
        return Response(status_code=204)

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service until interrupted; in-flight writes finish on shutdown."""
    import uvicorn

    host, _, port = config.listen.rpartition(":")
    app = create_app(config.open_storage(), config.open_executor())
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level=config.log_level)
