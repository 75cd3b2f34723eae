"""Deterministic stand-in for the compute Grid.

Scripts are pure transforms over port-named byte payloads.  Everything is a
function of (script, inputs, seed, node, run): repeated execution always
yields byte-identical outputs, and injected faults draw their coin from a
hash of (seed, node, run) so traces replay exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .errors import ConfigError, PayloadUnavailable, UnknownScript
from .kernel import AgentDesc, Outcome, PayloadStore
from .model import DataRef

ScriptFn = Callable[[dict[str, bytes], int, str], dict[str, bytes]]


class ScriptError(Exception):
    """Semantic failure raised by a script; becomes a Fail outcome."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _coin(seed: int, node: str, run: int) -> float:
    """Deterministic value in [0, 1) derived from (seed, node, run) only."""
    h = hashlib.sha256(f"{seed}:{node}:{run}".encode()).digest()
    return struct.unpack(">Q", h[:8])[0] / 2**64


def _parse_numbers(data: bytes) -> list[float]:
    try:
        return [float(tok) for tok in data.decode().split()]
    except (UnicodeDecodeError, ValueError) as exc:
        raise ScriptError("BAD_NUMERIC_INPUT", f"not a numeric vector: {exc}") from exc


def _format_numbers(values: list[float]) -> bytes:
    return " ".join(f"{v:.6f}" for v in values).encode()


def _script_concat(inputs: dict[str, bytes], seed: int, arg: str) -> dict[str, bytes]:
    joined = b"".join(inputs[port] for port in sorted(inputs))
    return {"out": joined}


def _script_checksum(inputs: dict[str, bytes], seed: int, arg: str) -> dict[str, bytes]:
    joined = b"".join(inputs[port] for port in sorted(inputs))
    return {"out": hashlib.sha256(joined).hexdigest().encode()}


def _script_scale(inputs: dict[str, bytes], seed: int, arg: str) -> dict[str, bytes]:
    try:
        factor = float(arg) if arg else 2.0
    except ValueError:
        raise ScriptError("BAD_SCALE_FACTOR", f"not a number: {arg!r}") from None
    out = {}
    for port, data in inputs.items():
        out[port if len(inputs) > 1 else "out"] = _format_numbers(
            [v * factor for v in _parse_numbers(data)]
        )
    return out


def _script_noisy_threshold(inputs: dict[str, bytes], seed: int, arg: str) -> dict[str, bytes]:
    """Add deterministic pseudo-noise, then fail if any value crosses the limit.

    Models an analysis step that breaks on a specific group of input values:
    crafted inputs above the threshold make the step fail semantically.
    """
    try:
        threshold = float(arg) if arg else 100.0
    except ValueError:
        raise ScriptError("BAD_THRESHOLD", f"not a number: {arg!r}") from None
    out = {}
    for port, data in inputs.items():
        values = _parse_numbers(data)
        noisy = []
        for i, v in enumerate(values):
            h = hashlib.sha256(f"{seed}:{port}:{i}".encode()).digest()
            noise = struct.unpack(">Q", h[:8])[0] / 2**64
            noisy.append(v + noise * 0.01)
        peak = max(noisy, default=0.0)
        if peak > threshold:
            raise ScriptError(
                "THRESHOLD_EXCEEDED",
                f"input group on port {port!r} peaks at {peak:.4f} > {threshold}",
            )
        out[port if len(inputs) > 1 else "out"] = _format_numbers(noisy)
    return out


BUILTIN_SCRIPTS: dict[str, Callable[[dict[str, bytes], int, str], dict[str, bytes]]] = {
    "concat": _script_concat,
    "checksum": _script_checksum,
    "scale": _script_scale,
    "noisy-threshold": _script_noisy_threshold,
}


class TaskRegistry:
    """Maps script references to deterministic transforms.

    A reference is ``name`` or ``name:arg``; the arg is passed through to the
    script (e.g. ``scale:3.0``).
    """

    def __init__(self, scripts: Optional[dict[str, Callable]] = None):
        self.scripts = dict(BUILTIN_SCRIPTS if scripts is None else scripts)

    def resolve(self, script_ref: str) -> tuple[Callable, str]:
        name, _, arg = script_ref.partition(":")
        try:
            return self.scripts[name], arg
        except KeyError:
            raise UnknownScript(f"no script {name!r} in registry") from None


@dataclass(frozen=True)
class FaultEntry:
    node: str
    mode: str  # "always" | "on-run" | "probability"
    run: Optional[int] = None
    p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("always", "on-run", "probability"):
            raise ConfigError(f"unknown fault mode {self.mode!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"fault probability must be in [0,1], got {self.p}")

    def triggers(self, node: str, run: int) -> bool:
        if node != self.node:
            return False
        if self.mode == "always":
            return True
        if self.mode == "on-run":
            return run == self.run
        return _coin(self.seed, node, run) < self.p


@dataclass(frozen=True)
class FaultPlan:
    entries: tuple[FaultEntry, ...] = ()

    def triggers(self, node: str, run: int) -> bool:
        return any(e.triggers(node, run) for e in self.entries)


@dataclass
class SimulatedGridExecutor:
    """Executes one node's script on a simulated compute element."""

    registry: TaskRegistry = field(default_factory=TaskRegistry)
    faults: FaultPlan = field(default_factory=FaultPlan)
    seed: int = 0
    agent: AgentDesc = field(
        default_factory=lambda: AgentDesc("sim-ce-1", "simulated compute element")
    )

    def run(
        self,
        script_ref: str,
        node: str,
        run: int,
        inputs: dict[str, DataRef],
        payloads: PayloadStore,
    ) -> Outcome:
        script, arg = self.registry.resolve(script_ref)
        if self.faults.triggers(node, run):
            return Outcome(
                log=f"fault injected on node {node} (run {run})",
                error=("INJECTED_FAULT", f"injected fault on node {node}"),
            )
        raw = {port: payloads.load(ref) for port, ref in inputs.items()}
        node_seed = struct.unpack(
            ">Q", hashlib.sha256(f"{self.seed}:{node}:{run}".encode()).digest()[:8]
        )[0]
        try:
            produced = script(raw, node_seed, arg)
        except ScriptError as exc:
            return Outcome(
                log=f"script {script_ref} failed on {node}: {exc}",
                error=(exc.code, str(exc)),
            )
        outputs = []
        log_lines = []
        for port in sorted(produced):
            ref = payloads.save(port, produced[port], media_hint="bytes")
            outputs.append((port, ref))
            log_lines.append(f"{node}.{port}: {len(produced[port])} bytes ({ref.digest[:12]})")
        return Outcome(outputs=tuple(outputs), log="\n".join(log_lines))


# ---------------------------------------------------------------------------
# executor.v1 config files
# ---------------------------------------------------------------------------

def fault_entry_from_dict(d: dict) -> FaultEntry:
    return FaultEntry(
        node=d["node"],
        mode=d["mode"],
        run=d.get("run"),
        p=float(d.get("p", 0.0)),
        seed=int(d.get("seed", 0)),
    )


def executor_from_dict(d: dict) -> SimulatedGridExecutor:
    if d.get("format", "executor.v1") != "executor.v1":
        raise ConfigError(f"unsupported executor config format {d.get('format')!r}")
    agent = d.get("agent")
    return SimulatedGridExecutor(
        faults=FaultPlan(tuple(fault_entry_from_dict(e) for e in d.get("faults", ()))),
        seed=int(d.get("seed", 0)),
        agent=AgentDesc.from_dict(agent) if agent else AgentDesc("sim-ce-1", "simulated compute element"),
    )


def load_executor_config(path: str | Path) -> SimulatedGridExecutor:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load executor config {path}: {exc}") from exc
    return executor_from_dict(data)
