"""Replay the bundled throughput tables and locate efficiency peaks.

The package ships per-GPU throughput measurements for five workloads on
three GPU platforms under power caps from 200 W to 700/750 W.  Without
raw power traces, analysis substitutes the cap for drawn power
(cap_proxy) and adds the constant 100 W node overhead.
"""

from powerbench.analysis import (
    build_analysis_document,
    bundled_table,
    metrics_from_replay,
    read_replay_csv,
)
from powerbench.report import emit_throughput_table

# Load both tables into one metric set.
metrics = []
for table in ("cv_training_throughput", "llm_throughput"):
    metrics += metrics_from_replay(read_replay_csv(bundled_table(table)))

# Efficiency peaks per (workload, device). The hill shape means neither
# the lowest nor the highest cap wins.
print("=== efficiency peaks (work units per joule, cap_proxy) ===")
doc = build_analysis_document(metrics, power_source="cap_proxy")
for curve in doc["curves"]:
    peak = curve["peak"]
    print(
        f"{curve['workload']:>20s} / {curve['device']:<7s} "
        f"peak {peak['cap_w']:5.0f} W at {peak['efficiency']:9.4f} {curve['unit']}/J"
    )

# The ResNet-50 grid, with the parenthesised convention for caps the
# MI300X did not actually enforce (its floor is 400 W).
print("\n=== ResNet-50 per-GPU throughput (images/s) ===")
resnet = [m for m in metrics if m.workload == "resnet50"]
print(emit_throughput_table(resnet, fmt="markdown"))

# Pareto membership: points on the performance-efficiency front.
print("=== pretraining/H200: Pareto front membership ===")
pre = next(
    c for c in doc["curves"]
    if c["workload"] == "pretraining" and c["device"] == "H200"
)
for p in pre["points"]:
    mark = "*" if p["pareto"] else " "
    print(
        f" {mark} {p['cap_w']:5.0f} W  {p['throughput_per_gpu']:9.1f} tokens/s  "
        f"{p['efficiency_units_per_j']:7.3f} tokens/J"
    )
print("\n(* = on the Pareto front; dominated points waste either power or time)")
