"""CLI exit codes, overrides, and output artifacts."""

import json
import sys

import pytest

from powerbench.analysis import bundled_table
from powerbench.cli import main


def write_sim_config(tmp_path, **sweep_overrides):
    sweep = {
        "cap_start_w": 200,
        "cap_end_w": 700,
        "cap_step_w": 100,
        "workload_command": [
            sys.executable, "-u", "-m", "powerbench.synthload",
            "--profile", "h100-like", "--cap-w", "{cap_w}",
            "--epochs", "2", "--batches", "2", "--samples", "32",
        ],
        "sampling_interval_ms": 5,
        "settle_s": 0.0,
    }
    sweep.update(sweep_overrides)
    config = {
        "backend": {"backend": "sim", "profile": "h100-like"},
        "sweep": sweep,
        "output_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


class TestSweepCommand:
    def test_full_sweep_exit_zero_six_dirs(self, tmp_path, capsys):
        config = write_sim_config(tmp_path)
        assert main(["sweep", "--config", str(config)]) == 0
        out_dir = tmp_path / "out"
        run_dirs = [p for p in out_dir.iterdir() if p.is_dir()]
        assert len(run_dirs) == 6
        captured = capsys.readouterr()
        assert captured.out.count("completed") >= 6

    def test_caps_override(self, tmp_path):
        config = write_sim_config(tmp_path)
        assert main(["sweep", "--config", str(config), "--caps", "200,400"]) == 0
        run_dirs = sorted(p.name for p in (tmp_path / "out").iterdir() if p.is_dir())
        assert run_dirs == ["cap0200w_rep0", "cap0400w_rep0"]

    def test_missing_config_exit_2(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert main(["sweep", "--config", str(missing)]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_workload_failure_exit_1(self, tmp_path):
        config = write_sim_config(
            tmp_path, workload_command=[sys.executable, "-c", "raise SystemExit(5)"]
        )
        assert main(["sweep", "--config", str(config), "--caps", "300"]) == 1

    def test_backend_env_override(self, tmp_path, monkeypatch, capsys):
        config = write_sim_config(tmp_path)
        monkeypatch.setenv("POWERBENCH_BACKEND", "command")
        # command backend without templates is a config error -> exit 2
        assert main(["sweep", "--config", str(config)]) == 2


class TestRunCommand:
    def test_single_run(self, tmp_path):
        config = write_sim_config(tmp_path)
        assert main(["run", "--config", str(config), "--cap-w", "300"]) == 0
        assert (tmp_path / "out" / "cap0300w_rep0" / "run.json").is_file()


class TestAnalyzeCommand:
    def test_missing_directory_exit_2(self, tmp_path):
        assert main(["analyze", "--input", str(tmp_path / "ghost")]) == 2


class TestReplayCommand:
    def test_cv_table_peaks(self, tmp_path, capsys):
        out = tmp_path / "replay"
        code = main([
            "replay", "--input", str(bundled_table("cv_training_throughput")),
            "--output", str(out),
        ])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "resnet50/H100: peak 300 W" in stdout
        assert "vit-l16/H100: peak 300 W" in stdout
        doc = json.loads((out / "analysis.json").read_text())
        assert doc["power_source"] == "cap_proxy"
        assert (out / "efficiency.csv").is_file()

    def test_llm_table_peaks(self, tmp_path, capsys):
        code = main([
            "replay", "--input", str(bundled_table("llm_throughput")),
            "--output", str(tmp_path / "replay"),
        ])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "pretraining/H100: peak 400 W" in stdout
        assert "inference/H100: peak 300 W" in stdout

    def test_empty_csv_exit_2(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("workload,device,cap_w,throughput_per_gpu,unit,gpus\n")
        assert main(["replay", "--input", str(empty)]) == 2

    def test_schema_mismatch_exit_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        assert main(["replay", "--input", str(bad)]) == 2


class TestReportCommand:
    def test_markdown_to_stdout(self, capsys):
        code = main([
            "report", "--input", str(bundled_table("cv_training_throughput")),
            "--workload", "resnet50",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "(771.68)" in out and "n/a" in out

    def test_csv_requires_single_workload(self, capsys):
        code = main([
            "report", "--input", str(bundled_table("cv_training_throughput")),
            "--format", "csv",
        ])
        assert code == 2

    def test_unknown_workload_exit_2(self):
        code = main([
            "report", "--input", str(bundled_table("cv_training_throughput")),
            "--workload", "doom3",
        ])
        assert code == 2


class TestSimulateCommand:
    def test_unknown_profile_exit_2(self, tmp_path, capsys):
        code = main(["simulate", "--profile", "rtx-zillion", "--output", str(tmp_path / "o")])
        assert code == 2
        assert "rtx-zillion" in capsys.readouterr().err

    def test_single_cap_peak_declined(self, tmp_path, capsys):
        code = main([
            "simulate", "--profile", "h100-like", "--caps", "700",
            "--epochs", "2", "--batches", "2", "--samples", "64",
            "--settle-s", "0", "--output", str(tmp_path / "o"),
        ])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "declined" in stdout
        doc = json.loads((tmp_path / "o" / "analysis.json").read_text())
        assert doc["curves"][0]["peak"] is None


class TestUsageErrors:
    def test_no_subcommand(self):
        with pytest.raises(SystemExit) as exc_info:
            main([])
        assert exc_info.value.code == 2

    def test_bad_caps_list(self):
        with pytest.raises(SystemExit) as exc_info:
            main(["sweep", "--config", "x.json", "--caps", "two,hundred"])
        assert exc_info.value.code == 2
