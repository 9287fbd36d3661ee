"""Turn runs (or replayed published tables) into efficiency analysis.

Node-level convention: throughput and GPU power are aggregated across the
node's GPUs, a fixed overhead (default 100 W) is added for non-GPU
consumers, and efficiency is node throughput divided by node power —
"work units per joule".  Per-GPU figures are node quantities divided by
the GPU count.

Two power sources:

* ``measured`` — integrates the sampled power traces over the active
  measurement windows (the default for live runs).
* ``cap_proxy`` — substitutes ``gpu_count * cap`` for measured GPU power.
  This is the only option when replaying published throughput tables that
  ship without raw traces; peak locations derived this way must be read
  as proxy-based.

Efficiency-versus-cap curves are hill-shaped for real devices: baseline
power amortisation pushes efficiency up at low caps, superlinear power
growth with clock frequency pulls it down at high caps.  The peak finder,
unimodality check, and Pareto front make that structure explicit.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AnalysisError, ConfigError, InsufficientData, TooFewPoints
from .orchestrator import RunRecord
from .protocol import build_measurement_windows, compute_work_units
from .telemetry import (
    ClockSummary,
    EnforcementVerdict,
    integrate_energy,
    verdict_from_mean_power,
)

DEFAULT_OVERHEAD_W = 100.0
POWER_SOURCES = ("measured", "cap_proxy")

REPLAY_CSV_HEADER = "workload,device,cap_w,throughput_per_gpu,unit,gpus"

# Devices known not to honour caps below a floor; replayed rows below the
# floor are flagged as unenforced since table CSVs carry no traces.
DEVICE_ENFORCEMENT_FLOORS = {"MI300X": 400.0}


@dataclass(frozen=True)
class RunMetrics:
    workload: str
    device: str
    unit: str
    cap_w: float
    gpu_count: int
    throughput_per_gpu: float
    node_throughput: float
    energy_j: float | None
    mean_power_per_gpu_w: float | None
    node_power_w: float
    efficiency: float
    per_gpu_efficiency: float
    enforcement: EnforcementVerdict
    clocks: ClockSummary | None
    power_source: str
    overhead_w: float
    run_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class EfficiencyCurve:
    workload: str
    device: str
    points: tuple[RunMetrics, ...]  # strictly increasing cap_w

    @property
    def caps(self) -> list[float]:
        return [p.cap_w for p in self.points]

    @property
    def efficiencies(self) -> list[float]:
        return [p.efficiency for p in self.points]

    @property
    def performances(self) -> list[float]:
        return [p.throughput_per_gpu for p in self.points]


@dataclass(frozen=True)
class ParetoFront:
    points: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class ComparisonTable:
    workload: str
    caps: tuple[float, ...]
    rankings: dict[float, tuple[tuple[str, float], ...]]  # cap -> ((device, perf) desc)
    leaders: dict[float, tuple[str, ...]]  # cap -> leading device(s), ties kept
    crossover_caps: tuple[float, ...]


def _node_power(gpu_power_w: float, overhead_w: float) -> float:
    return gpu_power_w + overhead_w


def compute_run_metrics(
    record: RunRecord,
    overhead_w: float = DEFAULT_OVERHEAD_W,
    power_source: str = "measured",
    enforcement_tolerance: float = 0.05,
) -> RunMetrics:
    """Derive throughput, energy, power, and efficiency for one run."""
    if power_source not in POWER_SOURCES:
        raise ConfigError(f"power_source must be one of {POWER_SOURCES}")
    if record.status == "failed":
        raise AnalysisError(f"run {record.run_id} did not complete: {record.error}")

    windows = build_measurement_windows(record.events, record.warmup)
    if not windows:
        raise InsufficientData(f"run {record.run_id} produced no measurement windows")
    totals = compute_work_units(windows, unit=record.unit or "images")
    active_time_s = totals["active_time_s"]
    if active_time_s <= 0:
        raise AnalysisError(f"run {record.run_id} has zero active time")

    gpu_count = len(record.device_ids)
    node_throughput = totals["total_samples"] / active_time_s
    throughput_per_gpu = node_throughput / gpu_count

    window_spans = [(w.t_start_ns, w.t_end_ns) for w in windows]
    measured_energy_j = 0.0
    for device_id in record.device_ids:
        trace = record.traces[device_id]
        measured_energy_j += sum(integrate_energy(trace, span) for span in window_spans)
    measured_per_gpu = measured_energy_j / active_time_s / gpu_count

    if power_source == "measured":
        energy_j = measured_energy_j
        gpu_power_w = measured_energy_j / active_time_s
        mean_power_per_gpu = measured_per_gpu
    else:
        gpu_power_w = gpu_count * record.cap_w
        mean_power_per_gpu = record.cap_w
        energy_j = gpu_power_w * active_time_s

    node_power_w = _node_power(gpu_power_w, overhead_w)
    efficiency = node_throughput / node_power_w

    # Enforcement is always judged from measured power when traces exist.
    enforcement = verdict_from_mean_power(
        record.cap_w, measured_per_gpu, enforcement_tolerance
    )

    pooled = _pooled_clock_summary(record, window_spans)

    return RunMetrics(
        workload=record.workload or "unknown",
        device=record.device_label or "unknown",
        unit=record.unit or "images",
        cap_w=record.cap_w,
        gpu_count=gpu_count,
        throughput_per_gpu=throughput_per_gpu,
        node_throughput=node_throughput,
        energy_j=energy_j,
        mean_power_per_gpu_w=mean_power_per_gpu,
        node_power_w=node_power_w,
        efficiency=efficiency,
        per_gpu_efficiency=throughput_per_gpu / (node_power_w / gpu_count),
        enforcement=enforcement,
        clocks=pooled,
        power_source=power_source,
        overhead_w=overhead_w,
        run_ids=(record.run_id,),
    )


def _pooled_clock_summary(record: RunRecord, window_spans) -> ClockSummary | None:
    """Clock summary pooled across the node's devices and windows."""
    sm = []
    mem = []
    for device_id in record.device_ids:
        trace = record.traces.get(device_id)
        if trace is None:
            continue
        for t_start, t_end in window_spans:
            for s in trace.samples:
                if s.valid and t_start <= s.t_ns <= t_end:
                    sm.append(s.sm_clock_mhz)
                    mem.append(s.mem_clock_mhz)
    if not sm:
        return None
    counts = Counter(mem)
    top = max(counts.values())
    mode = min(v for v, c in counts.items() if c == top)
    arr = np.asarray(sm, dtype=np.float64)
    return ClockSummary(
        sm_clock_mean=float(arr.mean()),
        sm_clock_p5=float(np.percentile(arr, 5)),
        sm_clock_p95=float(np.percentile(arr, 95)),
        mem_clock_mode=float(mode),
    )


def aggregate_repeats(metrics: list[RunMetrics]) -> list[RunMetrics]:
    """Mean-aggregate repeated (workload, device, cap) measurements."""
    groups: dict[tuple, list[RunMetrics]] = {}
    for m in metrics:
        groups.setdefault((m.workload, m.device, m.cap_w), []).append(m)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2])):
        group = groups[key]
        if len(group) == 1:
            out.append(group[0])
            continue
        n = len(group)
        base = group[0]
        node_throughput = sum(g.node_throughput for g in group) / n
        node_power = sum(g.node_power_w for g in group) / n
        energies = [g.energy_j for g in group if g.energy_j is not None]
        mean_powers = [g.mean_power_per_gpu_w for g in group if g.mean_power_per_gpu_w is not None]
        mean_power = sum(mean_powers) / len(mean_powers) if mean_powers else None
        verdict = verdict_from_mean_power(
            base.cap_w,
            mean_power if mean_power is not None else base.enforcement.mean_power_w,
        )
        out.append(
            replace(
                base,
                throughput_per_gpu=node_throughput / base.gpu_count,
                node_throughput=node_throughput,
                energy_j=sum(energies) / len(energies) if energies else None,
                mean_power_per_gpu_w=mean_power,
                node_power_w=node_power,
                efficiency=node_throughput / node_power,
                per_gpu_efficiency=(node_throughput / base.gpu_count) / (node_power / base.gpu_count),
                enforcement=verdict,
                run_ids=tuple(r for g in group for r in g.run_ids),
            )
        )
    return out


def build_efficiency_curve(metrics: list[RunMetrics]) -> EfficiencyCurve:
    """Sort one (workload, device) metric set into a cap-ascending curve."""
    if not metrics:
        raise AnalysisError("cannot build a curve from an empty metric set")
    workloads = {m.workload for m in metrics}
    devices = {m.device for m in metrics}
    if len(workloads) > 1 or len(devices) > 1:
        raise AnalysisError(
            f"curve requires a single workload/device, got {workloads}/{devices}"
        )
    caps = [m.cap_w for m in metrics]
    if len(set(caps)) != len(caps):
        raise AnalysisError(
            "duplicate caps in curve input; aggregate repeats by mean first"
        )
    pts = tuple(sorted(metrics, key=lambda m: m.cap_w))
    return EfficiencyCurve(workload=pts[0].workload, device=pts[0].device, points=pts)


def find_efficiency_peak(curve: EfficiencyCurve) -> dict:
    """Cap with maximum efficiency; ties break toward the lower cap."""
    if len(curve.points) < 2:
        raise TooFewPoints(
            f"peak analysis needs >= 2 points, curve has {len(curve.points)}"
        )
    best = max(curve.points, key=lambda p: (p.efficiency, -p.cap_w))
    return {"cap_w": best.cap_w, "efficiency": best.efficiency}


def check_unimodal(curve: EfficiencyCurve, tolerance: float = 0.0) -> dict:
    """Hill-shape verdict: non-decreasing up to the peak, non-increasing after.

    Violations smaller than ``tolerance * max(efficiency)`` are forgiven.
    """
    if len(curve.points) < 3:
        raise TooFewPoints(
            f"unimodality needs >= 3 points, curve has {len(curve.points)}"
        )
    eff = curve.efficiencies
    peak_index = max(range(len(eff)), key=lambda i: (eff[i], -i))
    slack = tolerance * max(eff)
    unimodal = all(
        eff[i + 1] >= eff[i] - slack for i in range(peak_index)
    ) and all(
        eff[i + 1] <= eff[i] + slack for i in range(peak_index, len(eff) - 1)
    )
    return {"unimodal": unimodal, "peak_index": peak_index}


def pareto_front(points: list[tuple[float, float]]) -> ParetoFront:
    """Maximal non-dominated subset under (performance up, efficiency up).

    A point is dominated when another is >= in both coordinates and > in
    at least one.  Result is ordered by (performance, efficiency).
    """
    if not points:
        raise AnalysisError("pareto front of an empty point set")
    order = sorted(points, key=lambda p: (-p[0], -p[1]))
    kept: list[tuple[float, float]] = []
    best_eff = float("-inf")
    setter_perf = float("nan")
    for perf, eff in order:
        if eff > best_eff or (eff == best_eff and perf == setter_perf):
            kept.append((perf, eff))
            best_eff = eff
            setter_perf = perf
    kept.sort(key=lambda p: (p[0], p[1]))
    return ParetoFront(points=tuple(kept))


def compare_platforms(curves: dict[str, EfficiencyCurve]) -> ComparisonTable:
    """Rank devices by per-GPU throughput at every common cap."""
    if len(curves) < 2:
        raise AnalysisError("platform comparison needs >= 2 devices")
    workloads = {c.workload for c in curves.values()}
    if len(workloads) > 1:
        raise AnalysisError(f"comparison requires one workload, got {workloads}")
    cap_sets = [set(c.caps) for c in curves.values()]
    common = sorted(set.intersection(*cap_sets))
    if not common:
        raise AnalysisError("devices share no common caps")

    perf_at = {
        device: {p.cap_w: p.throughput_per_gpu for p in curve.points}
        for device, curve in curves.items()
    }
    rankings = {}
    leaders = {}
    for cap in common:
        ranked = sorted(
            ((device, perf_at[device][cap]) for device in curves),
            key=lambda item: (-item[1], item[0]),
        )
        rankings[cap] = tuple(ranked)
        top = ranked[0][1]
        leaders[cap] = tuple(d for d, v in ranked if v == top)

    crossovers = tuple(
        cap
        for prev, cap in zip(common, common[1:])
        if set(leaders[cap]) != set(leaders[prev])
    )
    return ComparisonTable(
        workload=next(iter(workloads)),
        caps=tuple(common),
        rankings=rankings,
        leaders=leaders,
        crossover_caps=crossovers,
    )


def bundled_table(name: str) -> Path:
    """Path of a replay table shipped with the package.

    Available: ``cv_training_throughput`` (per-GPU images/s for three
    vision training workloads) and ``llm_throughput`` (per-GPU tokens/s
    for pre-training and inference serving).
    """
    import importlib.resources as resources

    ref = resources.files("powerbench").joinpath(f"data/{name}.csv")
    with resources.as_file(ref) as p:
        path = Path(p)
    if not path.is_file():
        raise ConfigError(f"no bundled table named {name!r}")
    return path


def read_replay_csv(path) -> list[dict]:
    """Read a published-throughput table (one row per workload/device/cap)."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != REPLAY_CSV_HEADER.split(","):
                raise ConfigError(
                    f"replay CSV {path} must start with header {REPLAY_CSV_HEADER!r}, got {header}"
                )
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row or not "".join(row).strip():
                    continue
                if len(row) != 6:
                    raise ConfigError(f"{path}:{lineno}: expected 6 columns, got {len(row)}")
                try:
                    rows.append(
                        {
                            "workload": row[0],
                            "device": row[1],
                            "cap_w": float(row[2]),
                            "throughput_per_gpu": float(row[3]),
                            "unit": row[4],
                            "gpus": int(row[5]),
                        }
                    )
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read replay CSV {path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"replay CSV {path} has no data rows")
    return rows


def metrics_from_replay(
    rows: list[dict],
    overhead_w: float = DEFAULT_OVERHEAD_W,
    power_source: str = "cap_proxy",
    enforcement_floors: dict[str, float] | None = None,
    enforcement_tolerance: float = 0.05,
) -> list[RunMetrics]:
    """Build cap-proxy metrics from published throughput rows.

    Replay has no traces, so ``measured`` is not available; devices with a
    known enforcement floor get their sub-floor rows flagged as unenforced
    with the floor standing in for the (unknown) drawn power.
    """
    if power_source != "cap_proxy":
        raise ConfigError("replay tables carry no traces; only cap_proxy is available")
    floors = DEVICE_ENFORCEMENT_FLOORS if enforcement_floors is None else enforcement_floors
    metrics = []
    for row in rows:
        cap = row["cap_w"]
        gpus = row["gpus"]
        node_throughput = row["throughput_per_gpu"] * gpus
        node_power = _node_power(gpus * cap, overhead_w)
        floor = floors.get(row["device"], 0.0)
        verdict = verdict_from_mean_power(cap, max(cap, floor), enforcement_tolerance)
        metrics.append(
            RunMetrics(
                workload=row["workload"],
                device=row["device"],
                unit=row["unit"],
                cap_w=cap,
                gpu_count=gpus,
                throughput_per_gpu=row["throughput_per_gpu"],
                node_throughput=node_throughput,
                energy_j=None,
                mean_power_per_gpu_w=None,
                node_power_w=node_power,
                efficiency=node_throughput / node_power,
                per_gpu_efficiency=row["throughput_per_gpu"] / (node_power / gpus),
                enforcement=verdict,
                clocks=None,
                power_source="cap_proxy",
                overhead_w=overhead_w,
                run_ids=(),
            )
        )
    return metrics


def metrics_from_records(
    records: list[RunRecord],
    overhead_w: float = DEFAULT_OVERHEAD_W,
    power_source: str = "measured",
) -> list[RunMetrics]:
    """Metrics for every analysable record, repeats mean-aggregated."""
    usable = [r for r in records if r.status in ("completed", "degraded")]
    if not usable:
        raise AnalysisError("no completed runs to analyse")
    metrics = [
        compute_run_metrics(r, overhead_w=overhead_w, power_source=power_source)
        for r in usable
    ]
    return aggregate_repeats(metrics)


def group_into_curves(metrics: list[RunMetrics]) -> list[EfficiencyCurve]:
    groups: dict[tuple[str, str], list[RunMetrics]] = {}
    for m in metrics:
        groups.setdefault((m.workload, m.device), []).append(m)
    return [build_efficiency_curve(groups[key]) for key in sorted(groups)]


def _metrics_obj(m: RunMetrics, on_front: bool) -> dict:
    clocks = None
    if m.clocks is not None:
        clocks = {
            "sm_clock_mean_mhz": m.clocks.sm_clock_mean,
            "sm_clock_p5_mhz": m.clocks.sm_clock_p5,
            "sm_clock_p95_mhz": m.clocks.sm_clock_p95,
            "mem_clock_mode_mhz": m.clocks.mem_clock_mode,
        }
    return {
        "cap_w": m.cap_w,
        "throughput_per_gpu": m.throughput_per_gpu,
        "node_throughput": m.node_throughput,
        "energy_j": m.energy_j,
        "mean_power_per_gpu_w": m.mean_power_per_gpu_w,
        "node_power_w": m.node_power_w,
        "efficiency_units_per_j": m.efficiency,
        "per_gpu_efficiency": m.per_gpu_efficiency,
        "enforced": m.enforcement.enforced,
        "excess_fraction": m.enforcement.excess_fraction,
        "clocks": clocks,
        "pareto": on_front,
        "run_ids": list(m.run_ids),
    }


def build_analysis_document(
    metrics: list[RunMetrics],
    overhead_w: float = DEFAULT_OVERHEAD_W,
    power_source: str = "measured",
    unimodality_tolerance: float = 0.0,
) -> dict:
    """Assemble the full results document (curves, peaks, fronts, rankings).

    Pure and deterministic: identical metrics produce an identical
    document, so persisted-run re-analysis can be compared byte for byte.
    """
    curves = group_into_curves(metrics)
    curve_docs = []
    by_workload: dict[str, dict[str, EfficiencyCurve]] = {}
    for curve in curves:
        by_workload.setdefault(curve.workload, {})[curve.device] = curve
        front = pareto_front(list(zip(curve.performances, curve.efficiencies)))
        front_set = set(front.points)
        peak = None
        peak_note = None
        try:
            peak = find_efficiency_peak(curve)
            if power_source == "cap_proxy":
                peak_note = (
                    "proxy-based: peak located with cap-as-power proxy; "
                    "measured-power traces unavailable"
                )
        except TooFewPoints as exc:
            peak_note = f"peak analysis declined: {exc}"
        unimodal = None
        try:
            unimodal = check_unimodal(curve, unimodality_tolerance)
        except TooFewPoints:
            pass
        points = [
            _metrics_obj(p, (p.throughput_per_gpu, p.efficiency) in front_set)
            for p in curve.points
        ]
        curve_docs.append(
            {
                "workload": curve.workload,
                "device": curve.device,
                "unit": curve.points[0].unit,
                "gpu_count": curve.points[0].gpu_count,
                "points": points,
                "peak": peak,
                "peak_note": peak_note,
                "unimodal": unimodal,
            }
        )

    comparisons = []
    for workload in sorted(by_workload):
        device_curves = by_workload[workload]
        if len(device_curves) < 2:
            continue
        table = compare_platforms(device_curves)
        comparisons.append(
            {
                "workload": workload,
                "caps": list(table.caps),
                "rankings": {
                    repr(cap): [[d, v] for d, v in table.rankings[cap]]
                    for cap in table.caps
                },
                "leaders": {
                    repr(cap): list(table.leaders[cap]) for cap in table.caps
                },
                "crossover_caps": list(table.crossover_caps),
            }
        )

    return {
        "schema": "powerbench-analysis-v1",
        "power_source": power_source,
        "overhead_w": overhead_w,
        "curves": curve_docs,
        "comparisons": comparisons,
    }


def serialize_analysis_document(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
