"""Command-line entry point.

Subcommands separate measurement (``run``, ``sweep``, ``simulate`` — the
hardware-touching half) from pure analysis (``analyze``, ``replay``,
``report``), so analysis runs anywhere a results directory or a published
throughput table is available.

Exit codes: 0 success, 1 one or more runs failed, 2 usage/config error.
``POWERBENCH_BACKEND`` overrides the backend kind given in the config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import analysis as an
from . import report as rp
from .devices import DEFAULT_PROFILES, build_sim_catalog, make_backend, SimBackend
from .errors import PowerBenchError
from .orchestrator import (
    RunConfig,
    SweepSpec,
    default_synthetic_command,
    execute_run,
    execute_sweep,
    load_sweep,
    persist_run,
)
from .protocol import WarmupPolicy

ANALYSIS_FILE = "analysis.json"
EFFICIENCY_FILE = "efficiency.csv"
CLOCKS_FILE = "clocks.csv"


def load_config(path: str) -> dict:
    from .errors import ConfigError

    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def _backend_from_config(config: dict):
    from .errors import ConfigError

    backend_cfg = dict(config.get("backend") or {})
    override = os.environ.get("POWERBENCH_BACKEND")
    if override:
        backend_cfg["backend"] = override
    if not backend_cfg.get("backend"):
        raise ConfigError("config is missing backend.backend (\"sim\" or \"command\")")
    return make_backend(backend_cfg)


def _sweep_spec_from_config(config: dict, args) -> SweepSpec:
    from .errors import ConfigError

    sweep = config.get("sweep") or {}
    if "workload_command" not in sweep:
        raise ConfigError("config is missing sweep.workload_command")
    warmup_cfg = sweep.get("warmup") or {}
    explicit = None
    if getattr(args, "caps", None):
        explicit = args.caps
    elif sweep.get("explicit_caps"):
        explicit = [float(c) for c in sweep["explicit_caps"]]
    return SweepSpec(
        cap_start_w=float(sweep.get("cap_start_w", 200)),
        cap_end_w=float(sweep.get("cap_end_w", 700)),
        cap_step_w=float(sweep.get("cap_step_w", 100)),
        workload_command=[str(a) for a in sweep["workload_command"]],
        include_device_max=bool(sweep.get("include_device_max", False)),
        repeats=int(args.repeats or sweep.get("repeats", 1)),
        device_ids=sweep.get("device_ids"),
        warmup=WarmupPolicy(
            skip_epochs=int(warmup_cfg.get("skip_epochs", 1)),
            skip_steps=int(warmup_cfg.get("skip_steps", 0)),
        ),
        sampling_interval_ms=float(sweep.get("sampling_interval_ms", 100)),
        settle_s=float(sweep.get("settle_s", 2.0)),
        fail_fast=bool(sweep.get("fail_fast", False)),
        explicit_caps=explicit,
    )


def _parse_caps(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad caps list: {text!r}") from None


def _power_source(text: str) -> str:
    value = text.replace("-", "_")
    if value not in ("measured", "cap_proxy"):
        raise argparse.ArgumentTypeError(
            f"power source must be 'measured' or 'cap-proxy', got {text!r}"
        )
    return value


def _run_summary_line(record) -> str:
    return (
        f"run {record.run_id}: {record.status}"
        + (f" ({record.error})" if record.error else "")
    )


def _write_analysis_outputs(metrics, output_dir: Path, overhead_w, power_source) -> dict:
    doc = an.build_analysis_document(
        metrics, overhead_w=overhead_w, power_source=power_source
    )
    curves = an.group_into_curves(metrics)
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / ANALYSIS_FILE).write_text(
        an.serialize_analysis_document(doc), encoding="utf-8"
    )
    (output_dir / EFFICIENCY_FILE).write_text(
        rp.emit_efficiency_plot_data(curves), encoding="utf-8"
    )
    (output_dir / CLOCKS_FILE).write_text(
        rp.emit_clock_plot_data(metrics), encoding="utf-8"
    )
    return doc


def _print_analysis_summary(doc: dict) -> None:
    for curve in doc["curves"]:
        name = f"{curve['workload']}/{curve['device']}"
        peak = curve["peak"]
        if peak is None:
            print(f"{name}: {curve['peak_note']}")
            continue
        shape = ""
        if curve["unimodal"] is not None:
            shape = " hill" if curve["unimodal"]["unimodal"] else " not-unimodal"
        note = " [proxy]" if curve["peak_note"] else ""
        print(
            f"{name}: peak {peak['cap_w']:g} W at "
            f"{peak['efficiency']:.4f} {curve['unit']}/J{shape}{note}"
        )
    for comp in doc["comparisons"]:
        caps = comp["caps"]
        leaders = comp["leaders"][repr(caps[-1])]
        line = f"{comp['workload']}: leader at {caps[-1]:g} W = {'/'.join(leaders)}"
        if comp["crossover_caps"]:
            line += f", crossovers at {comp['crossover_caps']}"
        print(line)


def cmd_run(args) -> int:
    config = load_config(args.config)
    backend = _backend_from_config(config)
    spec = _sweep_spec_from_config(config, args)
    output_dir = Path(args.output or config.get("output_dir") or "powerbench-out")
    run_config = RunConfig(
        run_id=f"cap{int(round(args.cap_w)):04d}w_rep0",
        cap_w=args.cap_w,
        repeat=0,
        workload_command=spec.workload_command,
        device_ids=spec.device_ids or [],
        warmup=spec.warmup,
        sampling_interval_ms=spec.sampling_interval_ms,
        settle_s=spec.settle_s,
    )
    record = execute_run(run_config, backend)
    persist_run(record, output_dir)
    print(_run_summary_line(record))
    return 0 if record.status == "completed" else 1


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    backend = _backend_from_config(config)
    spec = _sweep_spec_from_config(config, args)
    output_dir = Path(args.output or config.get("output_dir") or "powerbench-out")
    overhead_w = args.overhead_w if args.overhead_w is not None else float(
        config.get("overhead_w", an.DEFAULT_OVERHEAD_W)
    )
    result = execute_sweep(
        spec, backend, output_dir=output_dir, on_record=lambda r: print(_run_summary_line(r))
    )
    try:
        metrics = an.metrics_from_records(
            result.records, overhead_w=overhead_w, power_source=args.power_source
        )
        doc = _write_analysis_outputs(
            metrics, output_dir, overhead_w, args.power_source
        )
        _print_analysis_summary(doc)
    except PowerBenchError as exc:
        print(f"analysis skipped: {exc}", file=sys.stderr)
    print(f"sweep {result.status}: {len(result.records)} runs in {output_dir}")
    return 0 if result.status == "completed" else 1


def cmd_analyze(args) -> int:
    records = load_sweep(args.input)
    overhead_w = args.overhead_w if args.overhead_w is not None else an.DEFAULT_OVERHEAD_W
    metrics = an.metrics_from_records(
        records, overhead_w=overhead_w, power_source=args.power_source
    )
    output_dir = Path(args.output or args.input)
    doc = _write_analysis_outputs(metrics, output_dir, overhead_w, args.power_source)
    _print_analysis_summary(doc)
    return 0


def cmd_replay(args) -> int:
    rows = an.read_replay_csv(args.input)
    overhead_w = args.overhead_w if args.overhead_w is not None else an.DEFAULT_OVERHEAD_W
    metrics = an.metrics_from_replay(
        rows, overhead_w=overhead_w, power_source=args.power_source
    )
    output_dir = Path(args.output or Path.cwd() / f"replay-{Path(args.input).stem}")
    doc = _write_analysis_outputs(metrics, output_dir, overhead_w, "cap_proxy")
    _print_analysis_summary(doc)
    return 0


def cmd_report(args) -> int:
    from .errors import ConfigError

    source = Path(args.input)
    if source.is_dir():
        records = load_sweep(source)
        metrics = an.metrics_from_records(records)
    else:
        metrics = an.metrics_from_replay(an.read_replay_csv(source))
    workloads = sorted({m.workload for m in metrics})
    if args.workload:
        metrics = [m for m in metrics if m.workload == args.workload]
        if not metrics:
            raise ConfigError(
                f"workload {args.workload!r} not present (have: {workloads})"
            )
        workloads = [args.workload]
    if args.format == "csv" and len(workloads) > 1:
        raise ConfigError(
            f"csv table covers one workload; pick one with --workload (have: {workloads})"
        )
    chunks = []
    for workload in workloads:
        group = [m for m in metrics if m.workload == workload]
        table = rp.emit_throughput_table(group, fmt=args.format)
        if args.format == "markdown" and len(workloads) > 1:
            chunks.append(f"## {workload}\n\n{table}")
        else:
            chunks.append(table)
    document = "\n".join(chunks)
    if args.output:
        Path(args.output).write_text(document, encoding="utf-8")
    else:
        print(document, end="")
    return 0


def cmd_simulate(args) -> int:
    from .errors import ConfigError

    if args.profile not in DEFAULT_PROFILES:
        raise ConfigError(
            f"unknown profile {args.profile!r} (have: {sorted(DEFAULT_PROFILES)})"
        )
    backend = SimBackend(build_sim_catalog(args.profile))
    caps = args.caps or [200.0, 300.0, 400.0, 500.0, 600.0, 700.0]
    spec = SweepSpec(
        cap_start_w=min(caps),
        cap_end_w=max(caps),
        cap_step_w=100.0,
        workload_command=default_synthetic_command(
            args.profile,
            epochs=args.epochs,
            batches=args.batches,
            samples=args.samples,
        ),
        include_device_max=args.include_device_max,
        repeats=args.repeats or 1,
        sampling_interval_ms=args.interval_ms,
        settle_s=args.settle_s,
        explicit_caps=None if args.caps is None else caps,
    )
    output_dir = Path(args.output or f"powerbench-sim-{args.profile}")
    overhead_w = args.overhead_w if args.overhead_w is not None else an.DEFAULT_OVERHEAD_W
    result = execute_sweep(
        spec, backend, output_dir=output_dir, on_record=lambda r: print(_run_summary_line(r))
    )
    try:
        metrics = an.metrics_from_records(result.records, overhead_w=overhead_w)
        doc = _write_analysis_outputs(metrics, output_dir, overhead_w, "measured")
        _print_analysis_summary(doc)
    except PowerBenchError as exc:
        print(f"analysis skipped: {exc}", file=sys.stderr)
    print(f"simulated sweep {result.status}: {len(result.records)} runs in {output_dir}")
    return 0 if result.status == "completed" else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="powerbench",
        description="GPU power-cap sweep harness and efficiency analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_analysis_flags(p):
        p.add_argument("--output", help="output directory")
        p.add_argument("--overhead-w", dest="overhead_w", type=float, default=None,
                       help="constant non-GPU node power (default 100)")

    p_run = sub.add_parser("run", help="execute a single capped run")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--cap-w", dest="cap_w", type=float, required=True)
    p_run.add_argument("--output")
    p_run.add_argument("--repeats", type=int, default=None, help=argparse.SUPPRESS)
    p_run.set_defaults(func=cmd_run, caps=None)

    p_sweep = sub.add_parser("sweep", help="execute a full power-cap sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--caps", type=_parse_caps, default=None,
                         help="comma-separated cap list overriding the config schedule")
    p_sweep.add_argument("--repeats", type=int, default=None)
    p_sweep.add_argument("--power-source", dest="power_source",
                         type=_power_source, default="measured")
    add_common_analysis_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_an = sub.add_parser("analyze", help="re-analyse a persisted sweep directory")
    p_an.add_argument("--input", required=True)
    p_an.add_argument("--power-source", dest="power_source",
                      type=_power_source, default="measured")
    add_common_analysis_flags(p_an)
    p_an.set_defaults(func=cmd_analyze)

    p_re = sub.add_parser("replay", help="analyse a published throughput table (CSV)")
    p_re.add_argument("--input", required=True)
    p_re.add_argument("--power-source", dest="power_source",
                      type=_power_source, default="cap_proxy")
    add_common_analysis_flags(p_re)
    p_re.set_defaults(func=cmd_replay)

    p_rep = sub.add_parser("report", help="emit a device-by-cap throughput table")
    p_rep.add_argument("--input", required=True,
                       help="sweep output directory or replay CSV")
    p_rep.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p_rep.add_argument("--workload", default=None)
    p_rep.add_argument("--output", default=None, help="write to file instead of stdout")
    p_rep.set_defaults(func=cmd_report)

    p_sim = sub.add_parser("simulate", help="run the pipeline against the simulator")
    p_sim.add_argument("--profile", default="h100-like")
    p_sim.add_argument("--caps", type=_parse_caps, default=None)
    p_sim.add_argument("--include-device-max", action="store_true")
    p_sim.add_argument("--repeats", type=int, default=None)
    p_sim.add_argument("--epochs", type=int, default=3)
    p_sim.add_argument("--batches", type=int, default=5)
    p_sim.add_argument("--samples", type=int, default=512)
    p_sim.add_argument("--interval-ms", dest="interval_ms", type=float, default=10.0)
    p_sim.add_argument("--settle-s", dest="settle_s", type=float, default=0.2)
    add_common_analysis_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PowerBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
