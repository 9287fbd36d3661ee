"""Fixed-interval telemetry sampling and windowed trace analysis.

A sampler polls one device at a fixed cadence (default 100 ms) on the
harness monotonic clock until a stop signal fires.  Failed reads occupy
their slot as invalid samples — gaps are recorded, never interpolated at
collection time.  Analysis happens afterwards on the immutable trace:
trapezoidal energy integration over a time window (invalid samples bridged
linearly between their valid neighbours), mean power, clock summaries, and
the cap-enforcement verdict derived from measured mean power.
"""

from __future__ import annotations

import csv
import math
import threading
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import BackendUnavailable, InsufficientData, ReadFailure

DEFAULT_INTERVAL_MS = 100.0
# Inter-sample gaps beyond interval * (1 + jitter) are flagged on the trace.
GAP_JITTER_FRACTION = 0.5

TRACE_CSV_HEADER = "t_ns,device_id,power_w,sm_clock_mhz,mem_clock_mhz,memory_used_bytes,valid"


@dataclass(frozen=True)
class PowerSample:
    t_ns: int
    device_id: str
    power_w: float
    sm_clock_mhz: float
    mem_clock_mhz: float
    memory_used_bytes: int
    valid: bool


@dataclass
class TelemetryTrace:
    """Time-ordered samples from one device at one configured cadence."""

    device_id: str
    interval_ms: float
    samples: list[PowerSample] = field(default_factory=list)
    complete: bool = True

    def append(self, sample: PowerSample) -> None:
        if self.samples and sample.t_ns <= self.samples[-1].t_ns:
            raise ValueError("sample timestamps must be strictly increasing")
        self.samples.append(sample)

    def valid_samples(self) -> list[PowerSample]:
        return [s for s in self.samples if s.valid]

    @property
    def span_ns(self) -> tuple[int, int]:
        if not self.samples:
            raise InsufficientData("empty trace has no span")
        return self.samples[0].t_ns, self.samples[-1].t_ns

    def gap_indices(self, jitter_fraction: float = GAP_JITTER_FRACTION) -> list[int]:
        """Indices i where the gap samples[i-1] -> samples[i] exceeds tolerance."""
        limit_ns = self.interval_ms * 1e6 * (1.0 + jitter_fraction)
        out = []
        for i in range(1, len(self.samples)):
            if self.samples[i].t_ns - self.samples[i - 1].t_ns > limit_ns:
                out.append(i)
        return out


@dataclass(frozen=True)
class EnforcementVerdict:
    cap_w: float
    mean_power_w: float
    enforced: bool
    excess_fraction: float


@dataclass(frozen=True)
class ClockSummary:
    sm_clock_mean: float
    sm_clock_p5: float
    sm_clock_p95: float
    mem_clock_mode: float


def run_sampler(
    backend,
    device_id: str,
    interval_ms: float = DEFAULT_INTERVAL_MS,
    stop_signal: threading.Event | None = None,
    clock_ns=time.monotonic_ns,
    sleep_wait=None,
    phase_offset_ms: float = 0.0,
) -> TelemetryTrace:
    """Sample ``device_id`` at fixed cadence until ``stop_signal`` is set.

    Read failures are recorded as invalid samples in their slot; a
    vanished device truncates the trace and marks it incomplete.
    ``sleep_wait(seconds) -> bool`` defaults to ``stop_signal.wait`` so the
    loop reacts to the stop signal mid-sleep.  ``phase_offset_ms`` shifts
    the deadline grid so concurrent samplers do not wake in lockstep.
    """
    if interval_ms < 1:
        raise ValueError("interval_ms must be >= 1")
    if stop_signal is None:
        stop_signal = threading.Event()
    if sleep_wait is None:
        sleep_wait = stop_signal.wait

    trace = TelemetryTrace(device_id=device_id, interval_ms=interval_ms)
    interval_ns = int(interval_ms * 1e6)
    next_deadline = clock_ns()
    if phase_offset_ms > 0:
        if sleep_wait(phase_offset_ms / 1e3):
            return trace
        next_deadline = clock_ns()
    while not stop_signal.is_set():
        t_ns = clock_ns()
        try:
            raw = backend.read_raw_sample(device_id)
            sample = PowerSample(
                t_ns=t_ns,
                device_id=device_id,
                power_w=raw.power_w,
                sm_clock_mhz=raw.sm_clock_mhz,
                mem_clock_mhz=raw.mem_clock_mhz,
                memory_used_bytes=raw.memory_used_bytes,
                valid=True,
            )
        except ReadFailure:
            sample = PowerSample(
                t_ns=t_ns,
                device_id=device_id,
                power_w=math.nan,
                sm_clock_mhz=math.nan,
                mem_clock_mhz=math.nan,
                memory_used_bytes=0,
                valid=False,
            )
        except BackendUnavailable:
            trace.complete = False
            break
        if not trace.samples or t_ns > trace.samples[-1].t_ns:
            trace.append(sample)
        next_deadline += interval_ns
        remaining_s = (next_deadline - clock_ns()) / 1e9
        if remaining_s > 0:
            if sleep_wait(remaining_s):
                break
    return trace


class Sampler:
    """One background sampling thread per device."""

    def __init__(
        self,
        backend,
        device_id: str,
        interval_ms: float = DEFAULT_INTERVAL_MS,
        phase_offset_ms: float = 0.0,
    ):
        self._backend = backend
        self._device_id = device_id
        self._interval_ms = interval_ms
        self._phase_offset_ms = phase_offset_ms
        self._stop = threading.Event()
        self._trace: TelemetryTrace | None = None
        self._thread = threading.Thread(
            target=self._run, name=f"sampler-{device_id}", daemon=True
        )

    def _run(self) -> None:
        self._trace = run_sampler(
            self._backend,
            self._device_id,
            self._interval_ms,
            self._stop,
            phase_offset_ms=self._phase_offset_ms,
        )

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> TelemetryTrace:
        self._stop.set()
        self._thread.join()
        assert self._trace is not None
        return self._trace


def _bridged_nodes(trace: TelemetryTrace) -> tuple[np.ndarray, np.ndarray]:
    """Valid-sample (t_ns, power) nodes; invalid slots drop out, which is
    exactly the linear bridging the integrator needs."""
    valid = trace.valid_samples()
    if len(valid) < 2:
        raise InsufficientData(
            f"need >= 2 valid samples, trace {trace.device_id} has {len(valid)}"
        )
    t = np.array([s.t_ns for s in valid], dtype=np.float64)
    p = np.array([s.power_w for s in valid], dtype=np.float64)
    return t, p


def integrate_energy(trace: TelemetryTrace, window: tuple[int, int]) -> float:
    """Trapezoidal integral (joules) of power over ``window`` (ns, ns).

    The integrand is the piecewise-linear function through the valid
    samples; window edges falling between nodes use interpolated power, so
    the integral is additive across any interior split point.  The window
    must lie within the valid-sample span (at least two valid samples
    intersect the bridged segment it covers).
    """
    t_start, t_end = window
    if t_start >= t_end:
        raise ValueError("window start must precede window end")
    t, p = _bridged_nodes(trace)
    if t_start < t[0] or t_end > t[-1]:
        raise InsufficientData("window extends beyond the valid sample span")
    inside = (t >= t_start) & (t <= t_end)
    nodes_t = np.concatenate(([t_start], t[inside], [t_end])).astype(np.float64)
    nodes_p = np.concatenate(
        ([np.interp(t_start, t, p)], p[inside], [np.interp(t_end, t, p)])
    )
    # Duplicate endpoints (window edge on a sample) contribute zero width.
    seconds = np.diff(nodes_t) / 1e9
    return float(np.sum(0.5 * (nodes_p[:-1] + nodes_p[1:]) * seconds))


def mean_power(trace: TelemetryTrace, window: tuple[int, int]) -> float:
    """Windowed mean power: integrated energy over window duration."""
    t_start, t_end = window
    energy = integrate_energy(trace, window)
    return energy / ((t_end - t_start) / 1e9)


def clock_summary(trace: TelemetryTrace, window: tuple[int, int]) -> ClockSummary:
    """Clock statistics over valid samples inside the window.

    ``mem_clock_mode`` is the most frequent memory clock (lowest value on
    ties), which captures two-level memory-clock behaviour.
    """
    t_start, t_end = window
    valid = [s for s in trace.valid_samples() if t_start <= s.t_ns <= t_end]
    if not valid:
        raise InsufficientData("no valid samples in window")
    sm = np.array([s.sm_clock_mhz for s in valid], dtype=np.float64)
    mem = [s.mem_clock_mhz for s in valid]
    counts = Counter(mem)
    top = max(counts.values())
    mode = min(v for v, c in counts.items() if c == top)
    return ClockSummary(
        sm_clock_mean=float(sm.mean()),
        sm_clock_p5=float(np.percentile(sm, 5)),
        sm_clock_p95=float(np.percentile(sm, 95)),
        mem_clock_mode=float(mode),
    )


def check_cap_enforcement(
    trace: TelemetryTrace,
    cap_w: float,
    window: tuple[int, int],
    tolerance: float = 0.05,
) -> EnforcementVerdict:
    """Judge whether measured mean power respects the configured cap."""
    mp = mean_power(trace, window)
    return verdict_from_mean_power(cap_w, mp, tolerance)


def verdict_from_mean_power(cap_w: float, mean_power_w: float, tolerance: float = 0.05) -> EnforcementVerdict:
    enforced = mean_power_w <= cap_w * (1.0 + tolerance)
    excess = max(0.0, mean_power_w / cap_w - 1.0) if not enforced else 0.0
    return EnforcementVerdict(
        cap_w=float(cap_w),
        mean_power_w=float(mean_power_w),
        enforced=enforced,
        excess_fraction=excess,
    )


def write_trace_csv(trace: TelemetryTrace, path) -> None:
    """Persist a trace with the exact interchange header, LF-terminated."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_CSV_HEADER.split(","))
        for s in trace.samples:
            writer.writerow(
                [
                    s.t_ns,
                    s.device_id,
                    repr(s.power_w),
                    repr(s.sm_clock_mhz),
                    repr(s.mem_clock_mhz),
                    s.memory_used_bytes,
                    1 if s.valid else 0,
                ]
            )


def read_trace_csv(path, interval_ms: float = DEFAULT_INTERVAL_MS, device_id: str = "") -> TelemetryTrace:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_CSV_HEADER.split(","):
            raise ValueError(f"unexpected trace header in {path}: {header}")
        samples = []
        for row in reader:
            device_id = row[1]
            samples.append(
                PowerSample(
                    t_ns=int(row[0]),
                    device_id=row[1],
                    power_w=float(row[2]),
                    sm_clock_mhz=float(row[3]),
                    mem_clock_mhz=float(row[4]),
                    memory_used_bytes=int(row[5]),
                    valid=row[6] == "1",
                )
            )
    trace = TelemetryTrace(device_id=device_id, interval_ms=interval_ms)
    for s in samples:
        trace.append(s)
    return trace
