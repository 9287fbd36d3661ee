"""Metrics, efficiency curves, peaks, unimodality, Pareto, comparison."""

import numpy as np
import pytest

from powerbench.analysis import (
    aggregate_repeats,
    build_analysis_document,
    build_efficiency_curve,
    bundled_table,
    check_unimodal,
    compare_platforms,
    compute_run_metrics,
    find_efficiency_peak,
    group_into_curves,
    metrics_from_replay,
    pareto_front,
    read_replay_csv,
    serialize_analysis_document,
)
from powerbench.errors import AnalysisError, ConfigError, TooFewPoints
from powerbench.orchestrator import RunRecord
from powerbench.protocol import WarmupPolicy

from conftest import make_event_stream, make_trace


def synthetic_record(
    power_w=100.0,
    gpu_count=4,
    samples=1000,
    batch_ns=1_000_000_000,
    batches=3,
    epochs=1,
    cap_w=300.0,
    unit="images",
):
    """In-memory completed run with constant per-GPU power."""
    events = make_event_stream(
        epochs=epochs, batches=batches, samples=samples, batch_ns=batch_ns, t0_ns=1_000_000_000
    )
    span_samples = int((events[-1].recv_t_ns + 2_000_000_000) / 100_000_000) + 1
    device_ids = [f"sim{i}" for i in range(gpu_count)]
    traces = {
        d: make_trace([power_w] * span_samples, device_id=d) for d in device_ids
    }
    return RunRecord(
        run_id=f"cap{int(cap_w):04d}w_rep0",
        cap_w=cap_w,
        repeat=0,
        status="completed",
        device_ids=device_ids,
        workload_command=["synthetic"],
        warmup=WarmupPolicy(skip_epochs=0),
        sampling_interval_ms=100.0,
        traces=traces,
        events=events,
        wall_start_ns=0,
        wall_end_ns=events[-1].recv_t_ns + 1,
        cap_applied_t_ns=1,
        applied_caps={d: cap_w for d in device_ids},
        device_label="testdev",
        workload="synthetic",
        unit=unit,
        exit_code=0,
    )


def replay_metric(workload, device, cap, thr, gpus=4, overhead=100.0, unit="images"):
    return metrics_from_replay(
        [
            {
                "workload": workload,
                "device": device,
                "cap_w": cap,
                "throughput_per_gpu": thr,
                "unit": unit,
                "gpus": gpus,
            }
        ],
        overhead_w=overhead,
    )[0]


class TestComputeRunMetrics:
    def test_constant_power_node_efficiency(self):
        # 4 GPUs at 100 W, node rate 1000 units/s, overhead 100 -> 2.0 units/J.
        record = synthetic_record()
        m = compute_run_metrics(record)
        assert m.node_throughput == pytest.approx(1000.0)
        assert m.node_power_w == pytest.approx(500.0)
        assert m.efficiency == pytest.approx(2.0)
        assert m.per_gpu_efficiency == pytest.approx(m.efficiency)
        assert m.enforcement.enforced

    def test_cap_proxy_on_record(self):
        record = synthetic_record(cap_w=300.0)
        m = compute_run_metrics(record, power_source="cap_proxy")
        assert m.node_power_w == pytest.approx(4 * 300 + 100)
        assert m.mean_power_per_gpu_w == 300.0
        # enforcement still judged from the measured 100 W traces
        assert m.enforcement.mean_power_w == pytest.approx(100.0)

    def test_zero_overhead_single_gpu_cap_proxy(self):
        record = synthetic_record(gpu_count=1, cap_w=250.0)
        m = compute_run_metrics(record, overhead_w=0.0, power_source="cap_proxy")
        assert m.efficiency == pytest.approx(m.node_throughput / 250.0)

    def test_failed_record_rejected(self):
        record = synthetic_record()
        record.status = "failed"
        with pytest.raises(AnalysisError):
            compute_run_metrics(record)

    def test_steady_state_identity(self):
        record = synthetic_record(power_w=217.5, samples=640, batches=4)
        m = compute_run_metrics(record)
        assert m.efficiency == pytest.approx(m.node_throughput / m.node_power_w, rel=1e-12)

    def test_replay_table_resnet_300(self):
        rows = read_replay_csv(bundled_table("cv_training_throughput"))
        metrics = metrics_from_replay(rows)
        at_300 = next(
            m for m in metrics
            if m.workload == "resnet50" and m.device == "H100" and m.cap_w == 300
        )
        assert at_300.node_throughput == pytest.approx(5251.2)
        assert at_300.node_power_w == pytest.approx(1300.0)
        assert at_300.efficiency == pytest.approx(4.0394, abs=1e-3)

    def test_overhead_monotonicity(self):
        record = synthetic_record()
        low = compute_run_metrics(record, overhead_w=50.0)
        high = compute_run_metrics(record, overhead_w=150.0)
        assert high.efficiency < low.efficiency
        assert high.node_throughput == low.node_throughput


class TestAggregateRepeats:
    def test_mean_of_two(self):
        a = replay_metric("w", "d", 300, 100.0)
        b = replay_metric("w", "d", 300, 200.0)
        merged = aggregate_repeats([a, b])
        assert len(merged) == 1
        assert merged[0].throughput_per_gpu == pytest.approx(150.0)

    def test_singletons_untouched(self):
        a = replay_metric("w", "d", 300, 100.0)
        assert aggregate_repeats([a]) == [a]


class TestEfficiencyCurve:
    def test_sorted_by_cap(self):
        ms = [replay_metric("w", "d", c, t) for c, t in ((500, 5.0), (200, 2.0), (300, 3.0))]
        curve = build_efficiency_curve(ms)
        assert curve.caps == [200, 300, 500]

    def test_shuffled_input_identical(self):
        rng = np.random.default_rng(1)
        ms = [replay_metric("w", "d", c, float(c)) for c in (200, 300, 400, 500)]
        shuffled = list(ms)
        rng.shuffle(shuffled)
        assert build_efficiency_curve(ms) == build_efficiency_curve(shuffled)

    def test_duplicate_caps_error(self):
        ms = [replay_metric("w", "d", 300, 1.0), replay_metric("w", "d", 300, 2.0)]
        with pytest.raises(AnalysisError):
            build_efficiency_curve(ms)

    def test_mixed_devices_error(self):
        ms = [replay_metric("w", "d1", 300, 1.0), replay_metric("w", "d2", 400, 2.0)]
        with pytest.raises(AnalysisError):
            build_efficiency_curve(ms)

    def test_single_point_curve_valid_but_no_peak(self):
        curve = build_efficiency_curve([replay_metric("w", "d", 300, 1.0)])
        assert len(curve.points) == 1
        with pytest.raises(TooFewPoints):
            find_efficiency_peak(curve)


class TestPeak:
    def test_resnet_h100_peak_300(self):
        rows = read_replay_csv(bundled_table("cv_training_throughput"))
        metrics = [
            m for m in metrics_from_replay(rows)
            if m.workload == "resnet50" and m.device == "H100"
        ]
        curve = build_efficiency_curve(metrics)
        assert curve.efficiencies[:3] == pytest.approx([3.7457, 4.0394, 3.3553], abs=1e-3)
        assert find_efficiency_peak(curve) == {
            "cap_w": 300.0,
            "efficiency": pytest.approx(4.0394, abs=1e-3),
        }

    def test_pretraining_h100_peak_400(self):
        rows = read_replay_csv(bundled_table("llm_throughput"))
        metrics = [
            m for m in metrics_from_replay(rows)
            if m.workload == "pretraining" and m.device == "H100"
        ]
        curve = build_efficiency_curve(metrics)
        by_cap = dict(zip(curve.caps, curve.efficiencies))
        assert by_cap[300] == pytest.approx(55.33, abs=1e-2)
        assert by_cap[400] == pytest.approx(58.48, abs=1e-2)
        assert by_cap[500] == pytest.approx(52.77, abs=1e-2)
        assert find_efficiency_peak(curve)["cap_w"] == 400.0

    def test_monotone_curve_peaks_at_end(self):
        ms = [replay_metric("w", "d", c, float(c) ** 2) for c in (200, 300, 400)]
        curve = build_efficiency_curve(ms)
        assert find_efficiency_peak(curve)["cap_w"] == 400.0

    def test_tie_breaks_toward_lower_cap(self):
        # throughput proportional to node power gives equal efficiencies
        low = replay_metric("w", "d", 200, 900.0 / 4)
        high = replay_metric("w", "d", 300, low.efficiency * (4 * 300 + 100) / 4)
        assert low.efficiency == pytest.approx(high.efficiency, rel=1e-12)
        curve = build_efficiency_curve([low, high])
        assert find_efficiency_peak(curve)["cap_w"] == 200.0

    def test_scale_invariance_of_peak_location(self):
        rng = np.random.default_rng(23)
        for _ in range(30):
            caps = [200, 300, 400, 500]
            thr = rng.uniform(10, 100, size=4)
            ms = [replay_metric("w", "d", c, float(t)) for c, t in zip(caps, thr)]
            base = find_efficiency_peak(build_efficiency_curve(ms))["cap_w"]
            factor = float(rng.uniform(0.01, 50))
            scaled = [replay_metric("w", "d", c, float(t * factor)) for c, t in zip(caps, thr)]
            assert find_efficiency_peak(build_efficiency_curve(scaled))["cap_w"] == base


def curve_from_efficiencies(effs):
    """Synthetic curve with prescribed efficiency values at 100 W steps."""
    ms = []
    for i, e in enumerate(effs):
        cap = 200.0 + 100.0 * i
        node_power = 4 * cap + 100
        thr = e * node_power / 4
        ms.append(replay_metric("w", "d", cap, thr))
    return build_efficiency_curve(ms)


class TestUnimodal:
    def test_replay_shape(self):
        curve = curve_from_efficiencies([3.7457, 4.0394, 3.3553, 3.1337])
        result = check_unimodal(curve, tolerance=0.0)
        assert result == {"unimodal": True, "peak_index": 1}

    def test_strictly_increasing(self):
        curve = curve_from_efficiencies([1.0, 2.0, 3.0])
        result = check_unimodal(curve, tolerance=0.0)
        assert result["unimodal"] and result["peak_index"] == 2

    def test_zigzag_rejected_at_zero_tolerance(self):
        curve = curve_from_efficiencies([1.0, 3.0, 1.0, 3.0])
        assert check_unimodal(curve, tolerance=0.0)["unimodal"] is False

    def test_small_violation_forgiven_with_tolerance(self):
        curve = curve_from_efficiencies([1.0, 3.0, 2.0, 2.05])
        assert check_unimodal(curve, tolerance=0.0)["unimodal"] is False
        assert check_unimodal(curve, tolerance=0.02)["unimodal"] is True

    def test_too_few_points(self):
        curve = curve_from_efficiencies([1.0, 2.0])
        with pytest.raises(TooFewPoints):
            check_unimodal(curve)


def brute_force_front(points):
    """O(n^2) dominance oracle."""
    out = []
    for p in points:
        dominated = any(
            q[0] >= p[0] and q[1] >= p[1] and (q[0] > p[0] or q[1] > p[1])
            for q in points
        )
        if not dominated:
            out.append(p)
    return sorted(set(out) | {p for p in out}, key=lambda p: (p[0], p[1]))


class TestPareto:
    def test_all_non_dominated(self):
        front = pareto_front([(9, 6), (10, 5), (12, 4)])
        assert front.points == ((9, 6), (10, 5), (12, 4))

    def test_dominated_point_removed(self):
        front = pareto_front([(9, 6), (9, 4), (12, 4)])
        assert front.points == ((9, 6), (12, 4))

    def test_duplicates_kept(self):
        front = pareto_front([(5, 5), (5, 5)])
        assert front.points == ((5, 5), (5, 5))

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(99)
        for _ in range(500):
            n = int(rng.integers(1, 65))
            pts = [
                (float(x), float(y))
                for x, y in zip(
                    rng.integers(0, 20, size=n), rng.integers(0, 20, size=n)
                )
            ]
            mine = sorted(pareto_front(pts).points)
            oracle = brute_force_front(pts)
            assert sorted(set(mine)) == oracle
            # multiset check: duplicates of undominated points all survive
            assert len(mine) == sum(
                1
                for p in pts
                if not any(
                    q[0] >= p[0] and q[1] >= p[1] and (q[0] > p[0] or q[1] > p[1])
                    for q in pts
                )
            )

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            pts = [
                (float(x), float(y))
                for x, y in rng.uniform(0, 10, size=(int(rng.integers(1, 40)), 2))
            ]
            once = pareto_front(pts)
            twice = pareto_front(list(once.points))
            assert once == twice

    def test_empty_error(self):
        with pytest.raises(AnalysisError):
            pareto_front([])

    def test_peak_always_on_front(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            caps = [200.0 + 100 * i for i in range(6)]
            thr = rng.uniform(1, 500, size=6)
            ms = [replay_metric("w", "d", c, float(t)) for c, t in zip(caps, thr)]
            curve = build_efficiency_curve(ms)
            peak = find_efficiency_peak(curve)
            front = pareto_front(list(zip(curve.performances, curve.efficiencies)))
            peak_point = next(
                (p.throughput_per_gpu, p.efficiency)
                for p in curve.points
                if p.cap_w == peak["cap_w"]
            )
            assert peak_point in front.points


class TestComparePlatforms:
    def _curves(self, table, workload):
        rows = read_replay_csv(bundled_table(table))
        metrics = [m for m in metrics_from_replay(rows) if m.workload == workload]
        return {c.device: c for c in group_into_curves(metrics)}

    def test_resnet_700_ranking(self):
        table = compare_platforms(self._curves("cv_training_throughput", "resnet50"))
        ranked = [d for d, _ in table.rankings[700.0]]
        assert ranked == ["H200", "H100", "MI300X"]

    def test_inference_200_leader_mi300x(self):
        table = compare_platforms(self._curves("llm_throughput", "inference"))
        assert table.leaders[200.0] == ("MI300X",)

    def test_identical_curves_tie_no_crossover(self):
        a = build_efficiency_curve(
            [replay_metric("w", "devA", c, 10.0) for c in (200, 300)]
        )
        b = build_efficiency_curve(
            [replay_metric("w", "devB", c, 10.0) for c in (200, 300)]
        )
        table = compare_platforms({"devA": a, "devB": b})
        assert table.leaders[200.0] == ("devA", "devB")
        assert table.crossover_caps == ()

    def test_no_common_caps(self):
        a = build_efficiency_curve([replay_metric("w", "devA", 200, 1.0)])
        b = build_efficiency_curve([replay_metric("w", "devB", 300, 1.0)])
        with pytest.raises(AnalysisError):
            compare_platforms({"devA": a, "devB": b})

    def test_crossover_detected(self):
        a = build_efficiency_curve(
            [replay_metric("w", "devA", 200, 10.0), replay_metric("w", "devA", 300, 10.0)]
        )
        b = build_efficiency_curve(
            [replay_metric("w", "devB", 200, 5.0), replay_metric("w", "devB", 300, 20.0)]
        )
        table = compare_platforms({"devA": a, "devB": b})
        assert table.crossover_caps == (300.0,)


class TestReplayInput:
    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ConfigError):
            read_replay_csv(path)

    def test_empty_body(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("workload,device,cap_w,throughput_per_gpu,unit,gpus\n")
        with pytest.raises(ConfigError):
            read_replay_csv(path)

    def test_measured_unavailable_for_replay(self):
        rows = [
            {"workload": "w", "device": "d", "cap_w": 200.0,
             "throughput_per_gpu": 1.0, "unit": "images", "gpus": 4}
        ]
        with pytest.raises(ConfigError):
            metrics_from_replay(rows, power_source="measured")

    def test_mi300x_subfloor_rows_flagged(self):
        rows = read_replay_csv(bundled_table("cv_training_throughput"))
        metrics = metrics_from_replay(rows)
        mi = [m for m in metrics if m.device == "MI300X" and m.workload == "resnet50"]
        flags = {m.cap_w: m.enforcement.enforced for m in mi}
        assert flags[200.0] is False and flags[300.0] is False
        assert all(flags[c] for c in (400.0, 500.0, 600.0, 700.0, 750.0))


class TestAnalysisDocument:
    def test_deterministic_serialization(self):
        rows = read_replay_csv(bundled_table("llm_throughput"))
        metrics = metrics_from_replay(rows)
        doc_a = build_analysis_document(metrics, power_source="cap_proxy")
        doc_b = build_analysis_document(metrics, power_source="cap_proxy")
        assert serialize_analysis_document(doc_a) == serialize_analysis_document(doc_b)

    def test_proxy_note_present(self):
        rows = read_replay_csv(bundled_table("cv_training_throughput"))
        metrics = metrics_from_replay(rows)
        doc = build_analysis_document(metrics, power_source="cap_proxy")
        vit = next(
            c for c in doc["curves"]
            if c["workload"] == "vit-l16" and c["device"] == "H100"
        )
        assert vit["peak"]["cap_w"] == 300.0
        assert "proxy" in vit["peak_note"]

    def test_single_point_peak_declined(self):
        metrics = [replay_metric("w", "d", 700, 10.0)]
        doc = build_analysis_document(metrics, power_source="cap_proxy")
        curve = doc["curves"][0]
        assert curve["peak"] is None
        assert "declined" in curve["peak_note"]

    def test_pareto_membership_flags(self):
        rows = read_replay_csv(bundled_table("cv_training_throughput"))
        metrics = [
            m for m in metrics_from_replay(rows)
            if m.workload == "resnet50" and m.device == "H100"
        ]
        doc = build_analysis_document(metrics, power_source="cap_proxy")
        points = doc["curves"][0]["points"]
        flagged = [p["cap_w"] for p in points if p["pareto"]]
        curve = group_into_curves(metrics)[0]
        front = pareto_front(list(zip(curve.performances, curve.efficiencies)))
        front_caps = [
            p.cap_w
            for p in curve.points
            if (p.throughput_per_gpu, p.efficiency) in set(front.points)
        ]
        assert flagged == front_caps
