"""Workload event protocol: parsing, measurement windows, work totals.

Wire format (protocol v1): newline-delimited JSON records on the workload's
standard output, one event per line.

    {"ev": "handshake", "seq": 0, "workload": "resnet50", "unit": "images", "version": 1}
    {"ev": "epoch_begin", "seq": 1, "epoch": 0}
    {"ev": "batch_begin", "seq": 2, "epoch": 0}
    {"ev": "batch_end",   "seq": 3, "epoch": 0, "samples": 256}
    ...
    {"ev": "run_end", "seq": N}

``ev`` and ``seq`` are required everywhere; ``epoch`` on epoch/batch
events; ``samples`` on ``batch_end``.  Unknown extra fields are ignored;
unknown ``ev`` values are a protocol error.  The harness stamps each event
with its own monotonic receipt time — window boundaries never trust
adapter-side clocks, so cross-process skew cannot distort throughput.

A measurement window is one batch_begin/batch_end pair.  Warm-up exclusion
drops every window of the first ``skip_epochs`` epochs and then the first
``skip_steps`` remaining windows.  Totals count batch time only: idle gaps
between batches never enter throughput.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

from .errors import EventParseError, InsufficientData, ProtocolError

PROTOCOL_VERSION = 1

EVENT_KINDS = ("handshake", "epoch_begin", "batch_begin", "batch_end", "epoch_end", "run_end")
UNITS = ("images", "tokens")

_EPOCH_REQUIRED = {"epoch_begin", "batch_begin", "batch_end", "epoch_end"}


@dataclass(frozen=True)
class WorkloadEvent:
    kind: str
    seq: int
    epoch_index: int | None = None
    samples: int | None = None
    unit: str | None = None
    workload: str | None = None
    version: int | None = None
    recv_t_ns: int = 0


@dataclass(frozen=True)
class MeasurementWindow:
    t_start_ns: int
    t_end_ns: int
    epoch_index: int
    samples_in_window: int


@dataclass(frozen=True)
class WarmupPolicy:
    skip_epochs: int = 1
    skip_steps: int = 0

    def __post_init__(self):
        if self.skip_epochs < 0 or self.skip_steps < 0:
            raise ValueError("warm-up skip counts must be >= 0")


def parse_event_line(line: str, recv_t_ns: int | None = None) -> WorkloadEvent:
    """Parse one protocol line into an event.

    ``recv_t_ns`` is the harness receipt timestamp; when omitted it is
    stamped from the monotonic clock at call time.
    """
    if recv_t_ns is None:
        recv_t_ns = time.monotonic_ns()
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        offset = len(line[: exc.pos].encode("utf-8")) if exc.pos is not None else None
        raise EventParseError(f"malformed event line: {exc.msg}", offset=offset) from exc
    if not isinstance(obj, dict):
        raise EventParseError("event line is not a JSON object", offset=0)

    kind = obj.get("ev")
    if kind not in EVENT_KINDS:
        raise ProtocolError(f"unknown event kind {kind!r}")
    seq = obj.get("seq")
    if not isinstance(seq, int):
        raise ProtocolError(f"event missing integer seq: {line.strip()!r}")

    epoch = None
    if kind in _EPOCH_REQUIRED:
        epoch = obj.get("epoch")
        if not isinstance(epoch, int):
            raise ProtocolError(f"{kind} event missing integer epoch")

    samples = None
    if kind == "batch_end":
        samples = obj.get("samples")
        if not isinstance(samples, int) or samples < 0:
            raise ProtocolError("batch_end event missing non-negative integer samples")

    unit = workload = version = None
    if kind == "handshake":
        unit = obj.get("unit")
        if unit not in UNITS:
            raise ProtocolError(f"handshake unit must be one of {UNITS}, got {unit!r}")
        workload = obj.get("workload")
        if not isinstance(workload, str):
            raise ProtocolError("handshake missing workload name")
        version = obj.get("version")
        if version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {version!r}")

    return WorkloadEvent(
        kind=kind,
        seq=seq,
        epoch_index=epoch,
        samples=samples,
        unit=unit,
        workload=workload,
        version=version,
        recv_t_ns=recv_t_ns,
    )


def serialize_event(event: WorkloadEvent) -> str:
    """Canonical wire line for an event (protocol-defined fields only)."""
    obj: dict = {"ev": event.kind, "seq": event.seq}
    if event.kind in _EPOCH_REQUIRED:
        obj["epoch"] = event.epoch_index
    if event.kind == "batch_end":
        obj["samples"] = event.samples
    if event.kind == "handshake":
        obj["workload"] = event.workload
        obj["unit"] = event.unit
        obj["version"] = event.version
    return json.dumps(obj, separators=(",", ":"))


class EventStreamParser:
    """Sequential per-stream parser enforcing ordering rules.

    Checks that the stream opens with a handshake and that ``seq`` is
    strictly increasing; stamps receipt times from ``clock_ns``.
    """

    def __init__(self, clock_ns=time.monotonic_ns):
        self._clock_ns = clock_ns
        self._last_seq: int | None = None
        self.events: list[WorkloadEvent] = []

    def feed(self, line: str) -> WorkloadEvent | None:
        if not line.strip():
            return None
        event = parse_event_line(line, recv_t_ns=self._clock_ns())
        if self._last_seq is None:
            if event.kind != "handshake":
                raise ProtocolError(f"first event must be handshake, got {event.kind}")
        elif event.seq <= self._last_seq:
            raise ProtocolError(
                f"out-of-order seq {event.seq} after {self._last_seq}"
            )
        self._last_seq = event.seq
        self.events.append(event)
        return event

    @property
    def handshake(self) -> WorkloadEvent | None:
        return self.events[0] if self.events else None


def build_measurement_windows(
    events: list[WorkloadEvent], policy: WarmupPolicy | None = None
) -> list[MeasurementWindow]:
    """Pair batch events into windows and apply warm-up exclusion.

    An unpaired batch_begin at stream end is dropped; a batch_end without
    a matching begin is a protocol error.
    """
    if policy is None:
        policy = WarmupPolicy()
    if not events or events[0].kind != "handshake":
        raise ProtocolError("event stream must begin with a handshake")

    windows: list[MeasurementWindow] = []
    open_begin: WorkloadEvent | None = None
    for ev in events:
        if ev.kind == "batch_begin":
            if open_begin is not None:
                raise ProtocolError(
                    f"batch_begin seq={ev.seq} while batch seq={open_begin.seq} still open"
                )
            open_begin = ev
        elif ev.kind == "batch_end":
            if open_begin is None:
                raise ProtocolError(f"batch_end seq={ev.seq} without matching batch_begin")
            if ev.epoch_index != open_begin.epoch_index:
                raise ProtocolError(
                    f"batch_end epoch {ev.epoch_index} does not match begin epoch {open_begin.epoch_index}"
                )
            windows.append(
                MeasurementWindow(
                    t_start_ns=open_begin.recv_t_ns,
                    t_end_ns=ev.recv_t_ns,
                    epoch_index=ev.epoch_index,
                    samples_in_window=ev.samples,
                )
            )
            open_begin = None

    kept = [w for w in windows if w.epoch_index >= policy.skip_epochs]
    return kept[policy.skip_steps :]


def compute_work_units(
    windows: list[MeasurementWindow], unit: str = "images"
) -> dict:
    """Total samples and active (batch-only) time across windows."""
    if not windows:
        raise InsufficientData("no measurement windows")
    total = sum(w.samples_in_window for w in windows)
    active_ns = sum(w.t_end_ns - w.t_start_ns for w in windows)
    return {
        "total_samples": total,
        "active_time_s": active_ns / 1e9,
        "unit": unit,
    }
