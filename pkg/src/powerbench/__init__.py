"""powerbench: GPU power-cap sweep harness and efficiency analysis.

Library layout mirrors the measurement pipeline:

* ``devices`` — device enumeration, power caps, instantaneous telemetry
  (analytical simulator and command-template backends)
* ``telemetry`` — fixed-interval sampling, energy integration, cap
  enforcement
* ``protocol`` — the workload event protocol and measurement windows
* ``orchestrator`` — sweep planning, run execution, persistence
* ``analysis`` — efficiency curves, peaks, unimodality, Pareto fronts,
  platform comparison, published-table replay
* ``report`` — deterministic tables and plot-ready CSVs
* ``cli`` — the ``powerbench`` command
"""

from .devices import (
    DeviceDescriptor,
    DeviceProfile,
    OperatingPoint,
    SimBackend,
    build_sim_catalog,
    enumerate_devices,
    read_telemetry_sample,
    simulate_operating_point,
)
from .telemetry import (
    EnforcementVerdict,
    PowerSample,
    TelemetryTrace,
    check_cap_enforcement,
    clock_summary,
    integrate_energy,
    mean_power,
    run_sampler,
)
from .protocol import (
    MeasurementWindow,
    WarmupPolicy,
    WorkloadEvent,
    build_measurement_windows,
    compute_work_units,
    parse_event_line,
)
from .orchestrator import (
    RunRecord,
    SweepSpec,
    execute_run,
    execute_sweep,
    persist_run,
    plan_sweep,
)
from .analysis import (
    EfficiencyCurve,
    ParetoFront,
    RunMetrics,
    build_efficiency_curve,
    check_unimodal,
    compare_platforms,
    compute_run_metrics,
    find_efficiency_peak,
    metrics_from_replay,
    pareto_front,
    read_replay_csv,
)

__version__ = "0.1.0"
