"""Shared builders for synthetic traces and event streams."""

from __future__ import annotations

import pytest

from powerbench.protocol import WorkloadEvent
from powerbench.telemetry import PowerSample, TelemetryTrace


def make_trace(
    powers,
    t0_ns: int = 0,
    step_ns: int = 100_000_000,
    device_id: str = "dev0",
    valid_mask=None,
    sm_clocks=None,
    mem_clocks=None,
    interval_ms: float = 100.0,
) -> TelemetryTrace:
    trace = TelemetryTrace(device_id=device_id, interval_ms=interval_ms)
    for i, p in enumerate(powers):
        trace.append(
            PowerSample(
                t_ns=t0_ns + i * step_ns,
                device_id=device_id,
                power_w=float(p),
                sm_clock_mhz=float(sm_clocks[i]) if sm_clocks else 1000.0,
                mem_clock_mhz=float(mem_clocks[i]) if mem_clocks else 900.0,
                memory_used_bytes=0,
                valid=True if valid_mask is None else bool(valid_mask[i]),
            )
        )
    return trace


def make_event_stream(
    epochs: int,
    batches: int,
    samples: int = 256,
    batch_ns: int = 500_000_000,
    gap_ns: int = 0,
    t0_ns: int = 1_000,
    unit: str = "images",
    workload: str = "synthetic",
) -> list[WorkloadEvent]:
    """Deterministic well-formed event list with fixed receipt timestamps."""
    events = []
    seq = 0
    t = t0_ns

    def emit(kind, **kw):
        nonlocal seq
        events.append(WorkloadEvent(kind=kind, seq=seq, recv_t_ns=t, **kw))
        seq += 1

    emit("handshake", unit=unit, workload=workload, version=1)
    for e in range(epochs):
        emit("epoch_begin", epoch_index=e)
        for _ in range(batches):
            emit("batch_begin", epoch_index=e)
            t += batch_ns
            emit("batch_end", epoch_index=e, samples=samples)
            t += gap_ns
        emit("epoch_end", epoch_index=e)
    emit("run_end")
    return events


@pytest.fixture
def h100_profile():
    from powerbench.devices import build_sim_catalog

    return build_sim_catalog("h100-like", count=1)["sim0"].profile
