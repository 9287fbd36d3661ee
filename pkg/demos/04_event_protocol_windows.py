"""The workload event protocol and warm-up-aware throughput accounting.

Workloads print one JSON event per line; the harness stamps receipt times
on its own clock, pairs batch events into measurement windows, drops the
warm-up epoch, and counts only batch time — idle gaps between batches
never dilute throughput.
"""

from powerbench.protocol import (
    EventStreamParser,
    WarmupPolicy,
    build_measurement_windows,
    compute_work_units,
)

# A tiny recorded run: 2 epochs x 2 batches of 100 images. The first epoch
# is twice as slow (initialisation transients) and there is a fat idle gap
# in the middle of epoch 1.
wire = """\
{"ev":"handshake","seq":0,"workload":"demo","unit":"images","version":1}
{"ev":"epoch_begin","seq":1,"epoch":0}
{"ev":"batch_begin","seq":2,"epoch":0}
{"ev":"batch_end","seq":3,"epoch":0,"samples":100}
{"ev":"batch_begin","seq":4,"epoch":0}
{"ev":"batch_end","seq":5,"epoch":0,"samples":100}
{"ev":"epoch_end","seq":6,"epoch":0}
{"ev":"epoch_begin","seq":7,"epoch":1}
{"ev":"batch_begin","seq":8,"epoch":1}
{"ev":"batch_end","seq":9,"epoch":1,"samples":100}
{"ev":"batch_begin","seq":10,"epoch":1}
{"ev":"batch_end","seq":11,"epoch":1,"samples":100}
{"ev":"epoch_end","seq":12,"epoch":1}
{"ev":"run_end","seq":13}
"""

# Receipt times (seconds): epoch 0 batches take 2 s, epoch 1 batches 1 s,
# with a 5 s stall between the two epoch-1 batches.
recv_s = [0, 0, 0, 2, 2, 4, 4, 4, 4, 5, 10, 11, 11, 11]

clock = iter(int(s * 1e9) for s in recv_s)
parser = EventStreamParser(clock_ns=lambda: next(clock))
for line in wire.splitlines():
    parser.feed(line)
print(f"parsed {len(parser.events)} events; workload={parser.handshake.workload!r}")

for policy, label in [
    (WarmupPolicy(skip_epochs=0), "no warm-up exclusion"),
    (WarmupPolicy(skip_epochs=1), "first epoch discarded"),
]:
    windows = build_measurement_windows(parser.events, policy)
    totals = compute_work_units(windows)
    rate = totals["total_samples"] / totals["active_time_s"]
    print(
        f"{label:>22s}: {len(windows)} windows, "
        f"{totals['total_samples']} images in {totals['active_time_s']:.0f} s active "
        f"-> {rate:.1f} images/s"
    )

print(
    "\nThe 5 s stall sits between windows, so it never enters active time: "
    "with warm-up excluded the steady 100 images/s rate is recovered exactly."
)
