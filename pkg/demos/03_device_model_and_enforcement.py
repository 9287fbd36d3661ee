"""Poke at the analytical device model directly.

Steady power follows P = p_idle + k * f^alpha with alpha > 1, throughput
scales with the compute clock up to a knee, and capping below an
enforcement floor silently does nothing to the drawn power — the read-back
still reports the requested cap, exactly like the real device misbehaves.
"""

from powerbench.devices import SimBackend, build_sim_catalog, simulate_operating_point

h100 = build_sim_catalog("h100-like", count=1)["sim0"].profile
mi300x = build_sim_catalog("mi300x-like", count=1)["sim0"].profile

print("=== h100-like operating points ===")
print(f"{'cap W':>6s} {'drawn W':>8s} {'SM MHz':>8s} {'mem MHz':>8s} {'units/s':>8s}")
for cap in (100, 200, 300, 400, 500, 600, 700):
    p = simulate_operating_point(h100, cap)
    print(
        f"{cap:6d} {p.power_w:8.1f} {p.sm_clock_mhz:8.1f} "
        f"{p.mem_clock_mhz:8.0f} {p.throughput_units_per_s:8.1f}"
    )

print("\n=== mi300x-like: unenforced caps and the memory-clock step ===")
print(f"{'cap W':>6s} {'drawn W':>8s} {'mem MHz':>8s}   note")
for cap in (200, 300, 400, 500, 600, 750):
    p = simulate_operating_point(mi300x, cap)
    note = ""
    if p.power_w > cap * 1.05:
        note = "cap not enforced (floor 400 W)"
    elif cap == 500:
        note = "memory clock steps up at 500 W"
    print(f"{cap:6d} {p.power_w:8.1f} {p.mem_clock_mhz:8.0f}   {note}")

print("\n=== read-back honesty ===")
backend = SimBackend(build_sim_catalog("mi300x-like", count=1))
applied = backend.set_power_cap("sim0", 250)
backend.set_workload_active("sim0", True)
drawn = backend.read_raw_sample("sim0").power_w
print(f"requested {applied.requested_w:.0f} W, read-back {applied.reported_w:.0f} W, "
      f"actually drawn {drawn:.0f} W")
print("The violation only shows up in measured telemetry, never in the read-back.")
