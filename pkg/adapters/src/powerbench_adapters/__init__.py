"""Workload-side reference implementations of the benchmark event protocol.

Nothing here imports the harness: adapters talk to it exclusively through
protocol v1 lines on standard output.
"""

from .synthetic import SyntheticWorkloadSpec, event_structure, run_synthetic
from .trainer import AdapterStateError, TrainerEventAdapter

__all__ = [
    "SyntheticWorkloadSpec",
    "event_structure",
    "run_synthetic",
    "TrainerEventAdapter",
    "AdapterStateError",
]
