"""Deterministic synthetic workload emitting protocol v1 events.

The event structure (kinds, sequence numbers, epoch indices, sample
counts) is a pure function of the spec; only wall-clock pacing varies.
The first epoch can be stretched by a slowdown factor to mimic the
initialisation transients a warm-up exclusion policy is meant to discard.

By default batches sleep; ``busy=True`` spins on arithmetic instead so
live-telemetry smoke tests see a loaded core.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass

PROTOCOL_VERSION = 1
UNITS = ("images", "tokens")


@dataclass(frozen=True)
class SyntheticWorkloadSpec:
    epochs: int = 11
    batches_per_epoch: int = 10
    samples_per_batch: int = 256
    batch_duration_s: float = 0.1
    unit: str = "images"
    first_epoch_slowdown: float = 1.0
    workload_name: str = "synthetic"
    busy: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batches_per_epoch < 1:
            raise ValueError("epochs and batches_per_epoch must be >= 1")
        if self.batch_duration_s <= 0:
            raise ValueError("batch_duration_s must be > 0")
        if self.first_epoch_slowdown < 1.0:
            raise ValueError("first_epoch_slowdown must be >= 1")
        if self.unit not in UNITS:
            raise ValueError(f"unit must be one of {UNITS}")


def event_structure(spec: SyntheticWorkloadSpec) -> list[dict]:
    """The exact event objects a run will emit, in order, timing-free."""
    events = [
        {
            "ev": "handshake",
            "seq": 0,
            "workload": spec.workload_name,
            "unit": spec.unit,
            "version": PROTOCOL_VERSION,
        }
    ]
    seq = 1
    for epoch in range(spec.epochs):
        events.append({"ev": "epoch_begin", "seq": seq, "epoch": epoch})
        seq += 1
        for _ in range(spec.batches_per_epoch):
            events.append({"ev": "batch_begin", "seq": seq, "epoch": epoch})
            seq += 1
            events.append(
                {
                    "ev": "batch_end",
                    "seq": seq,
                    "epoch": epoch,
                    "samples": spec.samples_per_batch,
                }
            )
            seq += 1
        events.append({"ev": "epoch_end", "seq": seq, "epoch": epoch})
        seq += 1
    events.append({"ev": "run_end", "seq": seq})
    return events


def _pace_until(deadline: float, busy: bool) -> None:
    if busy:
        x = 1.0
        while time.monotonic() < deadline:
            x = x * 1.0000001 % 7.3  # keep the core warm without allocating
    else:
        remaining = deadline - time.monotonic()
        if remaining > 0:
            time.sleep(remaining)


def run_synthetic(spec: SyntheticWorkloadSpec, out=None) -> int:
    """Emit the event stream with the specified cadence; 0 on success."""
    out = out or sys.stdout
    try:
        deadline = time.monotonic()
        for event in event_structure(spec):
            if event["ev"] == "batch_end":
                duration = spec.batch_duration_s
                if event["epoch"] == 0:
                    duration *= spec.first_epoch_slowdown
                deadline += duration
                _pace_until(deadline, spec.busy)
            out.write(json.dumps(event, separators=(",", ":")) + "\n")
            out.flush()
    except BrokenPipeError:
        _silence_closed_stdout(out)
        return 1
    return 0


def _silence_closed_stdout(out) -> None:
    # Keep the interpreter's exit-time stdout flush from re-raising EPIPE.
    if out is not sys.stdout:
        return
    import os

    try:
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
    except OSError:
        pass


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="synthetic-workload",
        description="deterministic protocol v1 event emitter for harness testing",
    )
    parser.add_argument("--epochs", type=int, default=11)
    parser.add_argument("--batches", type=int, default=10)
    parser.add_argument("--samples", type=int, default=256)
    parser.add_argument("--batch-seconds", type=float, default=0.1)
    parser.add_argument("--unit", choices=UNITS, default="images")
    parser.add_argument("--first-epoch-slowdown", type=float, default=1.0)
    parser.add_argument("--name", default="synthetic")
    parser.add_argument("--busy", action="store_true",
                        help="burn compute instead of sleeping during batches")
    args = parser.parse_args(argv)
    try:
        spec = SyntheticWorkloadSpec(
            epochs=args.epochs,
            batches_per_epoch=args.batches,
            samples_per_batch=args.samples,
            batch_duration_s=args.batch_seconds,
            unit=args.unit,
            first_epoch_slowdown=args.first_epoch_slowdown,
            workload_name=args.name,
            busy=args.busy,
        )
    except ValueError as exc:
        parser.error(str(exc))
    return run_synthetic(spec)


if __name__ == "__main__":
    sys.exit(main())
