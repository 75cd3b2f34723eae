"""Command-line front end.

Every subcommand drives the same kernel and analysis operations as the HTTP
service; pointing ``--store`` at ``remote:<url>`` runs them against a served
instance through the remote storage backend.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import analysis, model, opm
from .errors import ProvError
from .executor import SimulatedGridExecutor, load_executor_config
from .kernel import (
    AgentDesc,
    ExecutionId,
    Outcome,
    ProvenanceKernel,
    Transition,
)
from .paths import ItemPath
from .service import ServiceConfig, event_to_json
from .storage import FileStorage, MemoryStorage, RemoteStorage


def _open_storage(store: str | None, config: str | None):
    if store:
        if store == "memory":
            return MemoryStorage()
        if store.startswith("file:"):
            return FileStorage(store[len("file:"):])
        if store.startswith("remote:"):
            return RemoteStorage(store[len("remote:"):])
        raise click.UsageError(f"unknown store {store!r} (memory | file:ROOT | remote:URL)")
    if config:
        return ServiceConfig.load(config).open_storage()
    return FileStorage("./provstore")


def _open_executor(executor_path: str | None, config: str | None) -> SimulatedGridExecutor:
    if executor_path:
        return load_executor_config(executor_path)
    if config:
        return ServiceConfig.load(config).open_executor()
    return SimulatedGridExecutor()


class Ctx:
    def __init__(self, store, config, as_json):
        self.config = config
        self.storage = _open_storage(store, config)
        self.kernel = ProvenanceKernel(self.storage)
        self.as_json = as_json

    def emit(self, payload: dict, human: str) -> None:
        if self.as_json:
            click.echo(json.dumps(payload, indent=2, sort_keys=True))
        else:
            click.echo(human)


@click.group()
@click.option("--config", envvar="PROVKERNEL_CONFIG", default=None,
              help="Service config file (JSON); PROVKERNEL_CONFIG is honoured.")
@click.option("--store", default=None,
              help="Storage backend: memory | file:ROOT | remote:URL (overrides config).")
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of text.")
@click.pass_context
def main(ctx, config, store, as_json):
    """Workflow provenance kernel."""
    ctx.obj = (store, config, as_json)


def _ctx(ctx) -> Ctx:
    store, config, as_json = ctx.obj
    return Ctx(store, config, as_json)


def _domain_guard(fn):
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ProvError as exc:
            click.echo(f"error [{exc.code}]: {exc.message}", err=True)
            sys.exit(1)

    return wrapper


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read {path}: {exc}")


def _parse_inputs(ctx: Ctx, item: ItemPath, pairs) -> dict:
    """name=@file | name=nums:1,2,3 | name=<literal text>"""
    payloads = ctx.kernel.payloads(item)
    refs = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.UsageError(f"--input must be name=value, got {pair!r}")
        name, value = pair.split("=", 1)
        if value.startswith("@"):
            try:
                data = Path(value[1:]).read_bytes()
            except OSError as exc:
                raise click.UsageError(f"cannot read input file: {exc}")
            hint = "bytes"
        elif value.startswith("nums:"):
            data = " ".join(
                f"{float(v):.6f}" for v in value[len("nums:"):].split(",")
            ).encode()
            hint = "numeric-vector"
        else:
            data, hint = value.encode(), "text"
        refs[name] = payloads.save(name, data, hint)
    return refs


@main.command("item-create")
@click.option("--spec", "spec_path", required=True, help="workflow.v1 JSON file.")
@click.option("--agent", "agent_ids", multiple=True, help="Agent id to register.")
@click.pass_context
@_domain_guard
def item_create(click_ctx, spec_path, agent_ids):
    """Create a provenance Item from a workflow spec."""
    ctx = _ctx(click_ctx)
    spec = model.spec_from_dict(_load_json(spec_path))
    agents = [AgentDesc(a, "registered via cli") for a in agent_ids] or [
        AgentDesc("sim-ce-1", "simulated compute element")
    ]
    item = ctx.kernel.create_item(spec, agents)
    ctx.emit({"item": str(item)}, str(item))


@main.command("derive")
@click.option("--item", "item_id", required=True)
@click.option("--spec", "spec_path", required=True)
@click.option("--note", default="")
@click.pass_context
@_domain_guard
def derive(click_ctx, item_id, spec_path, note):
    """Store an edited spec as a new version of an Item."""
    ctx = _ctx(click_ctx)
    version = ctx.kernel.derive_version(
        ItemPath.parse(item_id), model.spec_from_dict(_load_json(spec_path)), note
    )
    ctx.emit({"version": version}, f"version {version}")


@main.command("run")
@click.option("--item", "item_id", required=True)
@click.option("--version", type=int, default=None)
@click.option("--input", "inputs", multiple=True,
              help="External input, name=@file | name=nums:1,2 | name=text.")
@click.option("--executor", "executor_path", default=None, help="executor.v1 JSON file.")
@click.pass_context
@_domain_guard
def run_cmd(click_ctx, item_id, version, inputs, executor_path):
    """Start an execution and run it to completion."""
    ctx = _ctx(click_ctx)
    item = ItemPath.parse(item_id)
    version = version if version is not None else max(ctx.kernel.versions(item))
    refs = _parse_inputs(ctx, item, inputs)
    execution = ctx.kernel.start_execution(item, version, refs)
    executor = _open_executor(executor_path, ctx.config)
    status = ctx.kernel.run_to_completion(execution, executor)
    ctx.emit(
        {"item": str(item), "run": execution.run, "status": status.to_dict()},
        f"run {execution.run}: {status.status.value}",
    )
    if status.status.value != "Succeeded":
        failed = [n for n, s in status.node_states if s.value == "Failed"]
        if failed and not ctx.as_json:
            click.echo(f"failed nodes: {', '.join(failed)}")


@main.command("record")
@click.option("--item", "item_id", required=True)
@click.option("--run", "run_no", type=int, required=True)
@click.option("--node", required=True)
@click.option("--transition", required=True,
              type=click.Choice([t.value for t in Transition]))
@click.option("--agent", required=True)
@click.option("--outcome", "outcome_path", default=None,
              help="JSON file: {outputs: {port: {text|base64|numbers}}, log, error}.")
@click.pass_context
@_domain_guard
def record(click_ctx, item_id, run_no, node, transition, agent, outcome_path):
    """Record one externally observed activity transition."""
    ctx = _ctx(click_ctx)
    item = ItemPath.parse(item_id)
    execution = ExecutionId(item, run_no)
    outcome = None
    if outcome_path:
        raw = _load_json(outcome_path)
        from .service import decode_inputs

        refs = decode_inputs(ctx.kernel, item, raw.get("outputs", {}))
        err = raw.get("error")
        outcome = Outcome(
            outputs=tuple(sorted(refs.items())),
            log=raw.get("log", ""),
            error=(err["code"], err.get("message", "")) if err else None,
        )
    event = ctx.kernel.record_transition(
        execution, node, Transition(transition), agent, outcome
    )
    ctx.emit(event_to_json(event), f"event {event.seq}: {node} {transition}")


@main.command("trace")
@click.option("--item", "item_id", required=True)
@click.option("--run", "run_no", type=int, required=True)
@click.pass_context
@_domain_guard
def trace_cmd(click_ctx, item_id, run_no, ):
    """Print the event trace of one execution."""
    ctx = _ctx(click_ctx)
    events = ctx.kernel.trace(ExecutionId(ItemPath.parse(item_id), run_no))
    lines = [
        f"{e.seq:>5}  {e.transition.value:<11} {e.node:<24} agent={e.agent}"
        for e in events
    ]
    ctx.emit({"events": [event_to_json(e) for e in events]}, "\n".join(lines) or "(no events)")


@main.command("status")
@click.option("--item", "item_id", required=True)
@click.option("--run", "run_no", type=int, required=True)
@click.pass_context
@_domain_guard
def status_cmd(click_ctx, item_id, run_no):
    """Show the derived status of one execution."""
    ctx = _ctx(click_ctx)
    status = ctx.kernel.execution_status(ExecutionId(ItemPath.parse(item_id), run_no))
    human = [status.status.value] + [
        f"  {n}: {s.value}" for n, s in status.node_states
    ]
    ctx.emit(status.to_dict(), "\n".join(human))


@main.command("reconstruct")
@click.option("--item", "item_id", required=True)
@click.option("--version", type=int, required=True)
@click.option("--nodes", default="", help="Comma-separated targets; ancestors are included.")
@click.option("--out", "out_path", default=None, help="Write workflow.v1 JSON here.")
@click.pass_context
@_domain_guard
def reconstruct(click_ctx, item_id, version, nodes, out_path):
    """Reconstruct a stored pipeline version, whole or part."""
    ctx = _ctx(click_ctx)
    item = ItemPath.parse(item_id)
    if nodes:
        spec = analysis.reconstruct_part(
            ctx.kernel, item, version, {n for n in nodes.split(",") if n}
        )
    else:
        spec = analysis.reconstruct_spec(ctx.kernel, item, version)
    payload = model.spec_to_dict(spec)
    if out_path:
        Path(out_path).write_text(json.dumps(payload, indent=2, sort_keys=True))
        ctx.emit({"written": out_path}, f"wrote {out_path}")
    else:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))


@main.command("validate-spec")
@click.option("--candidate", required=True, help="workflow.v1 JSON file.")
@click.option("--blueprint", required=True, help="workflow.v1 JSON file.")
@click.pass_context
@_domain_guard
def validate_spec_cmd(click_ctx, candidate, blueprint):
    """Validate a candidate spec against a reference blueprint."""
    ctx = _ctx(click_ctx)
    findings = analysis.validate_spec(
        model.spec_from_dict(_load_json(candidate)),
        model.spec_from_dict(_load_json(blueprint)),
    )
    payload = {"findings": [f.to_dict() for f in findings], "ok": not findings}
    if not findings:
        ctx.emit(payload, "OK: no findings")
    else:
        lines = [
            f"{f.severity.value}: {f.kind.value} at {f.location}: {f.detail}"
            for f in findings
        ]
        ctx.emit(payload, "\n".join(lines))
        sys.exit(1)


def _report_human(report) -> str:
    lines = []
    for r in report.results:
        mark = "ok " if r.matched else "FAIL"
        lines.append(f"{mark} {r.node}.{r.port}: {r.detail}")
    lines.append("overall: " + ("matched" if report.overall else "NOT matched"))
    return "\n".join(lines)


@main.command("validate-offline")
@click.option("--item", "item_id", required=True)
@click.option("--run", "run_no", type=int, required=True)
@click.option("--ref", "ref_path", required=True, help="refset.v1 JSON file.")
@click.pass_context
@_domain_guard
def validate_offline_cmd(click_ctx, item_id, run_no, ref_path):
    """Validate stored execution results against a reference dataset."""
    ctx = _ctx(click_ctx)
    ref = analysis.refset_from_dict(_load_json(ref_path))
    report = analysis.validate_offline(
        ctx.kernel, ExecutionId(ItemPath.parse(item_id), run_no), ref
    )
    ctx.emit(report.to_dict(), _report_human(report))
    if not report.overall:
        sys.exit(1)


@main.command("validate-online")
@click.option("--item", "item_id", required=True)
@click.option("--version", type=int, default=None)
@click.option("--input", "inputs", multiple=True)
@click.option("--ref", "ref_path", required=True)
@click.option("--executor", "executor_path", default=None)
@click.pass_context
@_domain_guard
def validate_online_cmd(click_ctx, item_id, version, inputs, ref_path, executor_path):
    """Re-execute a pipeline and validate against a reference dataset."""
    ctx = _ctx(click_ctx)
    item = ItemPath.parse(item_id)
    version = version if version is not None else max(ctx.kernel.versions(item))
    refs = _parse_inputs(ctx, item, inputs)
    ref = analysis.refset_from_dict(_load_json(ref_path))
    report = analysis.validate_online(
        ctx.kernel, item, version, refs, ref, _open_executor(executor_path, ctx.config)
    )
    ctx.emit(report.to_dict(), _report_human(report))
    if not report.overall:
        sys.exit(1)


@main.command("annotate")
@click.option("--item", "item_id", required=True)
@click.option("--version", type=int, default=None)
@click.option("--author", required=True)
@click.option("--text", required=True)
@click.option("--tag", "tags", multiple=True)
@click.option("--target", default=None, help="Node id; omit to annotate the workflow.")
@click.pass_context
@_domain_guard
def annotate_cmd(click_ctx, item_id, version, author, text, tags, target):
    """Attach an annotation to a stored pipeline version."""
    ctx = _ctx(click_ctx)
    item = ItemPath.parse(item_id)
    version = version if version is not None else max(ctx.kernel.versions(item))
    ctx.kernel.annotate(
        item, version,
        model.Annotation(author, model.utcnow(), text, tuple(tags), target),
    )
    ctx.emit({"item": str(item), "version": version}, f"annotated version {version}")


@main.command("search")
@click.option("--query", default="")
@click.option("--tag", "tags", multiple=True)
@click.pass_context
@_domain_guard
def search_cmd(click_ctx, query, tags):
    """Search annotations across all stored pipelines."""
    ctx = _ctx(click_ctx)
    hits = analysis.search_annotations(ctx.kernel, query, list(tags))
    lines = [
        f"{h.item} v{h.version} [{h.annotation.author}] {h.annotation.text}"
        for h in hits
    ]
    ctx.emit({"hits": [h.to_dict() for h in hits]}, "\n".join(lines) or "(no hits)")


@main.command("compare")
@click.option("--a", "ref_a", required=True, help="item:run")
@click.option("--b", "ref_b", required=True, help="item:run")
@click.pass_context
@_domain_guard
def compare_cmd(click_ctx, ref_a, ref_b):
    """Compare two recorded analyses (specs and outcomes)."""
    ctx = _ctx(click_ctx)

    def parse(ref: str) -> ExecutionId:
        try:
            item_id, run_no = ref.rsplit(":", 1)
            return ExecutionId(ItemPath.parse(item_id), int(run_no))
        except ValueError:
            raise click.UsageError(f"expected item:run, got {ref!r}")

    report = analysis.compare_analyses(ctx.kernel, parse(ref_a), parse(ref_b))
    if report.empty:
        ctx.emit(report.to_dict(), "identical: same spec, same outcomes")
    else:
        lines = [
            f"{f.kind.value} at {f.location}" for f in report.spec_findings
        ] + [
            f"outcome diff on {d.node}: "
            f"onlyInA={list(d.only_in_a)} onlyInB={list(d.only_in_b)} "
            f"digestMismatch={list(d.digest_mismatch)}"
            for d in report.outcome_diffs
        ]
        ctx.emit(report.to_dict(), "\n".join(lines))


@main.command("export-opm")
@click.option("--item", "item_id", required=True)
@click.option("--run", "run_no", type=int, required=True)
@click.option("--out", "out_path", default=None, help="Write opm.v1 XML here (default stdout).")
@click.pass_context
@_domain_guard
def export_opm_cmd(click_ctx, item_id, run_no, out_path):
    """Export one execution as an opm.v1 XML graph."""
    ctx = _ctx(click_ctx)
    graph = opm.to_opm(ctx.kernel, ExecutionId(ItemPath.parse(item_id), run_no))
    body = opm.export_xml(graph)
    if out_path:
        Path(out_path).write_bytes(body)
        ctx.emit({"written": out_path, "nodes": len(graph.nodes), "edges": len(graph.edges)},
                 f"wrote {out_path}")
    else:
        sys.stdout.buffer.write(body)


@main.command("import-opm")
@click.argument("xml_file")
@click.pass_context
@_domain_guard
def import_opm_cmd(click_ctx, xml_file):
    """Parse and validate an opm.v1 XML graph."""
    ctx = _ctx(click_ctx)
    try:
        body = Path(xml_file).read_bytes()
    except OSError as exc:
        raise click.UsageError(f"cannot read {xml_file}: {exc}")
    graph = opm.import_xml(body)
    ctx.emit(
        {"nodes": len(graph.nodes), "edges": len(graph.edges)},
        f"valid opm.v1 graph: {len(graph.nodes)} nodes, {len(graph.edges)} edges",
    )


@main.command("serve")
@click.option("--listen", default=None, help="host:port (overrides config).")
@click.pass_context
@_domain_guard
def serve_cmd(click_ctx, listen):
    """Run the HTTP/JSON provenance service."""
    from .service import serve

    store, config, _ = click_ctx.obj
    cfg = ServiceConfig.load(config) if config else ServiceConfig()
    if store:
        if store == "memory":
            cfg.backend = "memory"
        elif store.startswith("file:"):
            cfg.backend, cfg.file_root = "file", store[len("file:"):]
        elif store.startswith("remote:"):
            cfg.backend, cfg.remote_url = "remote", store[len("remote:"):]
    if listen:
        cfg.listen = listen
    serve(cfg)


if __name__ == "__main__":
    main()
