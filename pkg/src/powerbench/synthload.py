"""Built-in synthetic workload for simulator-backed pipeline runs.

Emits protocol v1 events on stdout, pacing batch durations to the node
throughput the analytical device model yields at the active power cap, so
a capped simulated sweep reproduces the cap-dependent throughput scaling
of a real training job.  The orchestrator substitutes the actual cap into
the ``--cap-w {cap_w}`` placeholder of the workload command.

Runs as ``python -m powerbench.synthload``.
"""

from __future__ import annotations

import argparse
import sys
import time

from .devices import DEFAULT_PROFILES, build_sim_catalog, simulate_operating_point
from .protocol import PROTOCOL_VERSION


def _emit(out, seq: int, obj: dict) -> int:
    import json

    obj = {"ev": obj.pop("ev"), "seq": seq, **obj}
    out.write(json.dumps(obj, separators=(",", ":")) + "\n")
    out.flush()
    return seq + 1


def run(args, out=None) -> int:
    out = out or sys.stdout
    if args.profile not in DEFAULT_PROFILES:
        print(f"unknown profile {args.profile!r}", file=sys.stderr)
        return 2
    entry = build_sim_catalog(args.profile, count=1)["sim0"]
    point = simulate_operating_point(entry.profile, args.cap_w)
    node_units_per_s = entry.descriptor.gpus_per_node * point.throughput_units_per_s
    batch_s = args.samples / node_units_per_s

    try:
        seq = 0
        seq = _emit(
            out,
            seq,
            {
                "ev": "handshake",
                "workload": args.workload_name,
                "unit": args.unit,
                "version": PROTOCOL_VERSION,
            },
        )
        t0 = time.monotonic()
        deadline = t0
        for epoch in range(args.epochs):
            seq = _emit(out, seq, {"ev": "epoch_begin", "epoch": epoch})
            for _ in range(args.batches):
                seq = _emit(out, seq, {"ev": "batch_begin", "epoch": epoch})
                deadline += batch_s
                remaining = deadline - time.monotonic()
                if remaining > 0:
                    time.sleep(remaining)
                seq = _emit(
                    out,
                    seq,
                    {"ev": "batch_end", "epoch": epoch, "samples": args.samples},
                )
            seq = _emit(out, seq, {"ev": "epoch_end", "epoch": epoch})
        _emit(out, seq, {"ev": "run_end"})
    except BrokenPipeError:
        if out is sys.stdout:
            import os

            try:
                devnull = os.open(os.devnull, os.O_WRONLY)
                os.dup2(devnull, sys.stdout.fileno())
            except OSError:
                pass
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="powerbench-synthload",
        description="cap-paced synthetic workload emitting protocol v1 events",
    )
    parser.add_argument("--profile", default="h100-like")
    parser.add_argument("--cap-w", type=float, required=True)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--batches", type=int, default=5)
    parser.add_argument("--samples", type=int, default=512)
    parser.add_argument("--unit", choices=("images", "tokens"), default="images")
    parser.add_argument("--workload-name", default="synthetic")
    args = parser.parse_args(argv)
    if args.epochs < 1 or args.batches < 1 or args.samples < 0:
        parser.error("epochs and batches must be >= 1, samples >= 0")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
