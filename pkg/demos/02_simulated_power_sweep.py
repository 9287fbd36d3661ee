"""Run the full measurement pipeline against the analytical simulator.

One sequential run per cap: apply the cap, start 10 ms samplers on all
four simulated devices, launch the built-in synthetic workload (paced to
the model's operating point), parse its event stream, integrate energy
over the active batch windows, and restore caps.  The resulting
efficiency curve shows the characteristic hill.
"""

import tempfile
from pathlib import Path

from powerbench.analysis import build_analysis_document, metrics_from_records
from powerbench.devices import SimBackend, build_sim_catalog
from powerbench.orchestrator import (
    SweepSpec,
    default_synthetic_command,
    execute_sweep,
)

backend = SimBackend(build_sim_catalog("h100-like"))
spec = SweepSpec(
    cap_start_w=200,
    cap_end_w=700,
    cap_step_w=100,
    workload_command=default_synthetic_command("h100-like", epochs=2, batches=4, samples=512),
    sampling_interval_ms=10,
    settle_s=0.1,
)

with tempfile.TemporaryDirectory() as tmp:
    result = execute_sweep(spec, backend, output_dir=Path(tmp))
    print(f"sweep {result.status}: {len(result.records)} runs\n")

    metrics = metrics_from_records(result.records)
    print(f"{'cap':>6s} {'node W':>8s} {'units/s':>9s} {'units/J':>8s} {'SM MHz':>8s}")
    for m in metrics:
        print(
            f"{m.cap_w:6.0f} {m.node_power_w:8.1f} {m.node_throughput:9.1f} "
            f"{m.efficiency:8.4f} {m.clocks.sm_clock_mean:8.1f}"
        )

    doc = build_analysis_document(metrics)
    curve = doc["curves"][0]
    print(
        f"\npeak at {curve['peak']['cap_w']:.0f} W; "
        f"unimodal: {curve['unimodal']['unimodal']}"
    )
    print(
        "Low caps waste the idle baseline; high caps pay superlinear power "
        "for linear clock gains. The sweet spot here is 300 W."
    )
