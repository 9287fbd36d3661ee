"""Sweep planning and run execution.

A sweep is a strictly sequential series of runs, one per (power cap,
repeat).  Each run walks a fixed state machine:

    apply cap on all devices -> verify read-back -> settle -> start
    samplers -> launch workload -> stream protocol events -> workload
    exit -> stop samplers -> restore prior caps -> persist

Caps are restored to their pre-run values so a finished sweep leaves the
devices exactly as it found them.  Partial failures still produce a
persisted record with every artifact gathered so far.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .devices import enumerate_devices
from .errors import PersistError, PlanError, PowerBenchError, ProtocolError
from .protocol import EventStreamParser, WarmupPolicy, WorkloadEvent
from .telemetry import (
    DEFAULT_INTERVAL_MS,
    Sampler,
    TelemetryTrace,
    read_trace_csv,
    write_trace_csv,
)

DEFAULT_SETTLE_S = 2.0
STDERR_TAIL_CHARS = 2000


@dataclass(frozen=True)
class SweepSpec:
    cap_start_w: float
    cap_end_w: float
    cap_step_w: float
    workload_command: list[str]
    include_device_max: bool = False
    repeats: int = 1
    device_ids: list[str] | None = None
    warmup: WarmupPolicy = field(default_factory=WarmupPolicy)
    sampling_interval_ms: float = DEFAULT_INTERVAL_MS
    settle_s: float = DEFAULT_SETTLE_S
    fail_fast: bool = False
    # When set, runs exactly these caps instead of the arithmetic schedule
    # (CLI --caps override and explicit config lists).
    explicit_caps: list[float] | None = None

    def __post_init__(self):
        if self.cap_step_w <= 0:
            raise PlanError("cap_step_w must be > 0")
        if self.cap_start_w > self.cap_end_w:
            raise PlanError("cap_start_w must not exceed cap_end_w")
        if self.repeats < 1:
            raise PlanError("repeats must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    run_id: str
    cap_w: float
    repeat: int
    workload_command: list[str]
    device_ids: list[str]
    warmup: WarmupPolicy
    sampling_interval_ms: float
    settle_s: float


@dataclass
class RunRecord:
    run_id: str
    cap_w: float
    repeat: int
    status: str  # completed | degraded | failed
    device_ids: list[str]
    workload_command: list[str]
    warmup: WarmupPolicy
    sampling_interval_ms: float
    traces: dict[str, TelemetryTrace]
    events: list[WorkloadEvent]
    wall_start_ns: int
    wall_end_ns: int
    cap_applied_t_ns: int
    applied_caps: dict[str, float]
    device_label: str = ""
    workload: str | None = None
    unit: str | None = None
    exit_code: int | None = None
    error: str | None = None
    stderr_tail: str = ""


@dataclass
class SweepResult:
    status: str  # completed | partial | aborted
    records: list[RunRecord]


def plan_sweep(spec: SweepSpec, descriptor) -> list[RunConfig]:
    """Expand the cap schedule against one device's limits.

    Ascending caps, repeats innermost; caps outside the device range are
    clipped away; the device maximum is appended when requested and not
    already present.
    """
    if spec.explicit_caps is not None:
        caps = [
            float(c)
            for c in spec.explicit_caps
            if descriptor.cap_min_w <= c <= descriptor.cap_max_w
        ]
    else:
        caps = []
        cap = spec.cap_start_w
        while cap <= spec.cap_end_w + 1e-9:
            if descriptor.cap_min_w <= cap <= descriptor.cap_max_w:
                caps.append(float(cap))
            cap += spec.cap_step_w
        if spec.include_device_max and descriptor.cap_max_w not in caps:
            caps.append(float(descriptor.cap_max_w))
    caps = sorted(set(caps))
    if not caps:
        raise PlanError(
            f"no caps in [{spec.cap_start_w}, {spec.cap_end_w}] fit device range "
            f"[{descriptor.cap_min_w}, {descriptor.cap_max_w}]"
        )
    device_ids = list(spec.device_ids) if spec.device_ids else None
    configs = []
    for cap_w in caps:
        for r in range(spec.repeats):
            configs.append(
                RunConfig(
                    run_id=f"cap{int(round(cap_w)):04d}w_rep{r}",
                    cap_w=cap_w,
                    repeat=r,
                    workload_command=list(spec.workload_command),
                    device_ids=device_ids or [],
                    warmup=spec.warmup,
                    sampling_interval_ms=spec.sampling_interval_ms,
                    settle_s=spec.settle_s,
                )
            )
    return configs


def _substituted_command(command: list[str], cap_w: float) -> list[str]:
    # {cap_w} lets cap-aware workloads (e.g. the built-in synthetic one)
    # pace themselves to the operating point of the active run.
    return [arg.replace("{cap_w}", repr(cap_w)) for arg in command]


def _read_stderr(stream, sink: list[str]) -> None:
    try:
        for chunk in stream:
            sink.append(chunk)
    except ValueError:
        pass


def execute_run(config: RunConfig, backend) -> RunRecord:
    """Run one workload at one cap and gather all artifacts."""
    descriptors = {d.device_id: d for d in enumerate_devices(backend)}
    device_ids = list(config.device_ids) or sorted(descriptors)
    device_label = (
        descriptors[device_ids[0]].name if device_ids[0] in descriptors else ""
    )

    wall_start_ns = time.monotonic_ns()
    prior_caps = {d: backend.get_power_cap(d) for d in device_ids}

    applied: dict[str, float] = {}
    try:
        for d in device_ids:
            applied[d] = backend.set_power_cap(d, config.cap_w).reported_w
    except PowerBenchError as exc:
        for d, cap in prior_caps.items():
            if d in applied:
                backend.set_power_cap(d, cap)
        return RunRecord(
            run_id=config.run_id,
            cap_w=config.cap_w,
            repeat=config.repeat,
            status="failed",
            device_ids=device_ids,
            workload_command=list(config.workload_command),
            warmup=config.warmup,
            sampling_interval_ms=config.sampling_interval_ms,
            traces={},
            events=[],
            wall_start_ns=wall_start_ns,
            wall_end_ns=time.monotonic_ns(),
            cap_applied_t_ns=0,
            applied_caps=applied,
            device_label=device_label,
            error=f"cap apply failed: {exc}",
        )
    cap_applied_t_ns = time.monotonic_ns()

    if config.settle_s > 0:
        time.sleep(config.settle_s)

    # Staggered phases keep concurrent samplers from waking in lockstep,
    # which would stall the event-reader thread on every tick.
    samplers = {
        d: Sampler(
            backend,
            d,
            config.sampling_interval_ms,
            phase_offset_ms=i * config.sampling_interval_ms / max(1, len(device_ids)),
        )
        for i, d in enumerate(device_ids)
    }
    for s in samplers.values():
        s.start()

    parser = EventStreamParser()
    command = _substituted_command(config.workload_command, config.cap_w)
    error: str | None = None
    exit_code: int | None = None
    stderr_chunks: list[str] = []
    proc = None
    try:
        for d in device_ids:
            backend.set_workload_active(d, True)
        proc = subprocess.Popen(
            command,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        stderr_thread = threading.Thread(
            target=_read_stderr, args=(proc.stderr, stderr_chunks), daemon=True
        )
        stderr_thread.start()
        assert proc.stdout is not None
        for line in proc.stdout:
            try:
                parser.feed(line)
            except ProtocolError as exc:
                error = f"protocol error: {exc}"
                break
        exit_code = proc.wait()
        stderr_thread.join(timeout=5.0)
    except FileNotFoundError:
        error = f"workload command not found: {command[0]}"
    finally:
        if proc is not None and proc.poll() is None:
            proc.kill()
            proc.wait()
        for d in device_ids:
            backend.set_workload_active(d, False)

    traces = {d: s.stop() for d, s in samplers.items()}

    for d, cap in prior_caps.items():
        backend.set_power_cap(d, cap)
    wall_end_ns = time.monotonic_ns()

    if error is None and exit_code not in (0, None):
        error = f"workload exited with code {exit_code}"
    if error is None and not any(e.kind == "run_end" for e in parser.events):
        error = "workload ended without run_end event"

    if error is not None:
        status = "failed"
    elif any(not t.complete for t in traces.values()):
        status = "degraded"
    else:
        status = "completed"

    handshake = parser.handshake
    return RunRecord(
        run_id=config.run_id,
        cap_w=config.cap_w,
        repeat=config.repeat,
        status=status,
        device_ids=device_ids,
        workload_command=command,
        warmup=config.warmup,
        sampling_interval_ms=config.sampling_interval_ms,
        traces=traces,
        events=parser.events,
        wall_start_ns=wall_start_ns,
        wall_end_ns=wall_end_ns,
        cap_applied_t_ns=cap_applied_t_ns,
        applied_caps=applied,
        device_label=device_label,
        workload=handshake.workload if handshake else None,
        unit=handshake.unit if handshake else None,
        exit_code=exit_code,
        error=error,
        stderr_tail="".join(stderr_chunks)[-STDERR_TAIL_CHARS:],
    )


def execute_sweep(spec: SweepSpec, backend, output_dir=None, on_record=None) -> SweepResult:
    """Execute a full plan sequentially; one cap active at a time.

    A failed run does not abort the sweep unless ``spec.fail_fast``.
    With ``output_dir`` set, each record is persisted as it completes.
    """
    descriptors = enumerate_devices(backend)
    if not descriptors:
        raise PlanError("no devices visible to the backend")
    selected = spec.device_ids or [d.device_id for d in descriptors]
    by_id = {d.device_id: d for d in descriptors}
    for dev in selected:
        if dev not in by_id:
            raise PlanError(f"device {dev!r} not visible to the backend")
    configs = plan_sweep(spec, by_id[selected[0]])

    records: list[RunRecord] = []
    aborted = False
    for config in configs:
        record = execute_run(config, backend)
        records.append(record)
        if output_dir is not None:
            persist_run(record, output_dir)
        if on_record is not None:
            on_record(record)
        if record.status == "failed" and spec.fail_fast:
            aborted = True
            break

    if aborted:
        status = "aborted"
    elif all(r.status == "completed" for r in records):
        status = "completed"
    else:
        status = "partial"
    return SweepResult(status=status, records=records)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _event_to_obj(event: WorkloadEvent) -> dict:
    obj: dict = {"ev": event.kind, "seq": event.seq, "recv_t_ns": event.recv_t_ns}
    if event.epoch_index is not None:
        obj["epoch"] = event.epoch_index
    if event.samples is not None:
        obj["samples"] = event.samples
    if event.kind == "handshake":
        obj["workload"] = event.workload
        obj["unit"] = event.unit
        obj["version"] = event.version
    return obj


def _event_from_obj(obj: dict) -> WorkloadEvent:
    return WorkloadEvent(
        kind=obj["ev"],
        seq=obj["seq"],
        epoch_index=obj.get("epoch"),
        samples=obj.get("samples"),
        unit=obj.get("unit"),
        workload=obj.get("workload"),
        version=obj.get("version"),
        recv_t_ns=obj["recv_t_ns"],
    )


def persist_run(record: RunRecord, output_dir) -> Path:
    """Write ``<run_id>/trace_<device>.csv``, ``events.ndjson``, ``run.json``.

    Re-persisting the same record overwrites idempotently.  Returns the
    manifest path.
    """
    run_dir = Path(output_dir) / record.run_id
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        trace_files = {}
        for device_id, trace in record.traces.items():
            name = f"trace_{device_id}.csv"
            write_trace_csv(trace, run_dir / name)
            trace_files[device_id] = name
        events_name = "events.ndjson"
        with open(run_dir / events_name, "w", encoding="utf-8", newline="") as fh:
            for event in record.events:
                fh.write(json.dumps(_event_to_obj(event), sort_keys=True))
                fh.write("\n")
        checksums = {name: _sha256(run_dir / name) for name in [*trace_files.values(), events_name]}
        manifest = {
            "run_id": record.run_id,
            "cap_w": record.cap_w,
            "repeat": record.repeat,
            "status": record.status,
            "device_ids": record.device_ids,
            "workload_command": record.workload_command,
            "warmup": {
                "skip_epochs": record.warmup.skip_epochs,
                "skip_steps": record.warmup.skip_steps,
            },
            "sampling_interval_ms": record.sampling_interval_ms,
            "wall_start_ns": record.wall_start_ns,
            "wall_end_ns": record.wall_end_ns,
            "cap_applied_t_ns": record.cap_applied_t_ns,
            "applied_caps": record.applied_caps,
            "device_label": record.device_label,
            "workload": record.workload,
            "unit": record.unit,
            "exit_code": record.exit_code,
            "error": record.error,
            "stderr_tail": record.stderr_tail,
            "incomplete_traces": sorted(
                d for d, t in record.traces.items() if not t.complete
            ),
            "artifacts": {"traces": trace_files, "events": events_name},
            "checksums": checksums,
        }
        manifest_path = run_dir / "run.json"
        with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise PersistError(f"failed to persist run {record.run_id}: {exc}") from exc
    return manifest_path


def load_run(run_dir) -> RunRecord:
    """Rebuild a RunRecord from its on-disk artifacts."""
    run_dir = Path(run_dir)
    try:
        with open(run_dir / "run.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PersistError(f"cannot load run manifest in {run_dir}: {exc}") from exc

    traces = {}
    incomplete = set(manifest.get("incomplete_traces", []))
    for device_id, name in manifest["artifacts"]["traces"].items():
        trace = read_trace_csv(
            run_dir / name,
            interval_ms=manifest["sampling_interval_ms"],
            device_id=device_id,
        )
        trace.complete = device_id not in incomplete
        traces[device_id] = trace

    events = []
    with open(run_dir / manifest["artifacts"]["events"], encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                events.append(_event_from_obj(json.loads(line)))

    return RunRecord(
        run_id=manifest["run_id"],
        cap_w=manifest["cap_w"],
        repeat=manifest["repeat"],
        status=manifest["status"],
        device_ids=manifest["device_ids"],
        workload_command=manifest["workload_command"],
        warmup=WarmupPolicy(**manifest["warmup"]),
        sampling_interval_ms=manifest["sampling_interval_ms"],
        traces=traces,
        events=events,
        wall_start_ns=manifest["wall_start_ns"],
        wall_end_ns=manifest["wall_end_ns"],
        cap_applied_t_ns=manifest["cap_applied_t_ns"],
        applied_caps=manifest["applied_caps"],
        device_label=manifest.get("device_label", ""),
        workload=manifest["workload"],
        unit=manifest["unit"],
        exit_code=manifest["exit_code"],
        error=manifest["error"],
        stderr_tail=manifest.get("stderr_tail", ""),
    )


def load_sweep(output_dir) -> list[RunRecord]:
    """Load every persisted run under ``output_dir``, sorted by run id."""
    output_dir = Path(output_dir)
    if not output_dir.is_dir():
        raise PersistError(f"sweep directory not found: {output_dir}")
    run_dirs = sorted(p for p in output_dir.iterdir() if (p / "run.json").is_file())
    if not run_dirs:
        raise PersistError(f"no persisted runs under {output_dir}")
    return [load_run(p) for p in run_dirs]


def default_synthetic_command(
    profile: str,
    epochs: int = 3,
    batches: int = 5,
    samples: int = 512,
    unit: str = "images",
) -> list[str]:
    """Workload command for the built-in cap-paced synthetic workload."""
    return [
        sys.executable,
        "-u",
        "-m",
        "powerbench.synthload",
        "--profile",
        profile,
        "--cap-w",
        "{cap_w}",
        "--epochs",
        str(epochs),
        "--batches",
        str(batches),
        "--samples",
        str(samples),
        "--unit",
        unit,
    ]
