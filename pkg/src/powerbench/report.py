"""Render metrics into table and plot-ready documents.

All outputs are deterministic, UTF-8, LF-terminated.  CSV variants carry
full precision (shortest round-trip float form) so parsing an emitted
table reproduces the source values exactly; the markdown table uses the
same notation plus the parenthesised-cell convention for caps the device
did not actually enforce.  Rasterising plots is left to external tools
consuming the CSVs.
"""

from __future__ import annotations

import csv
import io

from .analysis import EfficiencyCurve, RunMetrics
from .errors import AnalysisError


def _fmt(value: float) -> str:
    # Shortest round-trip form; integers render bare (300 not 300.0).
    if value == int(value):
        return str(int(value))
    return repr(value)


def emit_throughput_table(metrics: list[RunMetrics], fmt: str = "markdown") -> str:
    """Device-by-cap throughput grid for one workload set.

    Markdown: rows are devices, columns are ascending caps, missing cells
    render ``n/a`` and unenforced caps are wrapped in parentheses.  CSV is
    the long form ``device,cap_w,value,enforced``.
    """
    if not metrics:
        raise AnalysisError("cannot tabulate an empty metric set")
    if fmt not in ("markdown", "csv"):
        raise AnalysisError(f"unknown table format {fmt!r}")

    caps = sorted({m.cap_w for m in metrics})
    devices = sorted({m.device for m in metrics})
    cell = {(m.device, m.cap_w): m for m in metrics}

    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["device", "cap_w", "value", "enforced"])
        for device in devices:
            for cap in caps:
                m = cell.get((device, cap))
                if m is None:
                    continue
                writer.writerow(
                    [
                        device,
                        _fmt(cap),
                        repr(m.throughput_per_gpu),
                        1 if m.enforcement.enforced else 0,
                    ]
                )
        return buf.getvalue()

    header = ["device"] + [f"{_fmt(c)} W" for c in caps]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * len(header)) + "|",
    ]
    for device in devices:
        row = [device]
        for cap in caps:
            m = cell.get((device, cap))
            if m is None:
                row.append("n/a")
            elif m.enforcement.enforced:
                row.append(_fmt(m.throughput_per_gpu))
            else:
                row.append(f"({_fmt(m.throughput_per_gpu)})")
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def emit_efficiency_plot_data(curves: list[EfficiencyCurve]) -> str:
    """Efficiency-versus-performance series, cap as the curve parameter."""
    if not curves:
        raise AnalysisError("no curves to emit")
    rows = []
    for curve in curves:
        for p in curve.points:
            rows.append(
                (
                    curve.workload,
                    curve.device,
                    p.cap_w,
                    p.throughput_per_gpu,
                    p.efficiency,
                )
            )
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["workload", "device", "cap_w", "performance_per_gpu", "efficiency_units_per_j"]
    )
    for workload, device, cap, perf, eff in rows:
        writer.writerow([workload, device, _fmt(cap), repr(perf), repr(eff)])
    return buf.getvalue()


def emit_clock_plot_data(metrics: list[RunMetrics]) -> str:
    """Clock-versus-cap series; rows without clock data are skipped and
    counted in a trailing comment line."""
    rows = []
    omitted = 0
    for m in sorted(metrics, key=lambda m: (m.workload, m.device, m.cap_w)):
        if m.clocks is None:
            omitted += 1
            continue
        rows.append(
            (
                m.workload,
                m.device,
                m.cap_w,
                m.clocks.sm_clock_mean,
                m.clocks.mem_clock_mode,
            )
        )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["workload", "device", "cap_w", "sm_clock_mean_mhz", "mem_clock_mode_mhz"]
    )
    for workload, device, cap, sm, mem in rows:
        writer.writerow([workload, device, _fmt(cap), repr(sm), repr(mem)])
    out = buf.getvalue()
    if omitted:
        out += f"# omitted {omitted} rows without clock data\n"
    return out
