"""Adapter skeleton mapping training-loop callbacks to protocol events.

Wire the four hooks into whatever callback surface the training framework
offers (e.g. on_train_epoch_start / on_train_batch_start /
on_train_batch_end / on_train_epoch_end) and pass the true per-batch
sample count to ``batch_end``. Output is line-buffered and flushed per
event so the harness's receipt timestamps stay tight.

The adapter enforces its own hook ordering: a misuse raises immediately
and nothing malformed is ever written to the stream.
"""

from __future__ import annotations

import json
import sys


class AdapterStateError(RuntimeError):
    """Hooks were invoked out of order."""


class TrainerEventAdapter:
    def __init__(self, workload: str, unit: str = "images", out=None):
        if unit not in ("images", "tokens"):
            raise ValueError("unit must be 'images' or 'tokens'")
        self._out = out or sys.stdout
        self._workload = workload
        self._unit = unit
        self._seq = 0
        self._started = False
        self._epoch: int | None = None
        self._in_batch = False
        self._finished = False

    def _emit(self, obj: dict) -> None:
        obj = {"ev": obj.pop("ev"), "seq": self._seq, **obj}
        self._out.write(json.dumps(obj, separators=(",", ":")) + "\n")
        self._out.flush()
        self._seq += 1

    def _check(self, condition: bool, message: str) -> None:
        if not condition:
            raise AdapterStateError(message)

    def start(self) -> None:
        self._check(not self._started, "start() called twice")
        self._started = True
        self._emit(
            {
                "ev": "handshake",
                "workload": self._workload,
                "unit": self._unit,
                "version": 1,
            }
        )

    def epoch_begin(self, epoch: int) -> None:
        self._check(self._started and not self._finished, "epoch_begin before start")
        self._check(self._epoch is None, f"epoch {self._epoch} still open")
        self._epoch = epoch
        self._emit({"ev": "epoch_begin", "epoch": epoch})

    def batch_begin(self) -> None:
        self._check(self._epoch is not None, "batch_begin outside an epoch")
        self._check(not self._in_batch, "previous batch still open")
        self._in_batch = True
        self._emit({"ev": "batch_begin", "epoch": self._epoch})

    def batch_end(self, samples: int) -> None:
        self._check(self._in_batch, "batch_end without batch_begin")
        if samples < 0:
            raise ValueError("samples must be >= 0")
        self._in_batch = False
        self._emit({"ev": "batch_end", "epoch": self._epoch, "samples": int(samples)})

    def epoch_end(self) -> None:
        self._check(self._epoch is not None, "epoch_end outside an epoch")
        self._check(not self._in_batch, "batch still open at epoch_end")
        self._emit({"ev": "epoch_end", "epoch": self._epoch})
        self._epoch = None

    def finish(self) -> None:
        self._check(self._started and not self._finished, "finish before start")
        self._check(self._epoch is None and not self._in_batch, "run still open")
        self._finished = True
        self._emit({"ev": "run_end"})
