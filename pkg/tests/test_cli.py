from __future__ import annotations

import io
import json
import os
import sys
from pathlib import Path

import pytest
import yaml

from main import main
from tracing.codec import read_trace
from tracing.events import EventKind

# Fixed batch, no per-slot cost and no noise: every decode cycle takes the same time
FIXED_SUITE = {
    "n_trials": 2,
    "cycles": 300,
    "train_cycles": 200,
    "profile": {"kind": "fixed"},
    "ground_truth": {"a": 0.0, "noise": 0.0},
    "trials": [
        {"trial_id": 0, "seed": 0, "faults": []},
        {"trial_id": 1, "seed": 1, "faults": [{"family": "CpuContention", "onset": 250, "duration": 30}]},
    ],
}


def _error(capsys: pytest.CaptureFixture[str]) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def fixed_run(tmp_path_factory: pytest.TempPathFactory) -> dict[str, Path]:
    root = tmp_path_factory.mktemp("cli")
    suite = root / "suite.yaml"
    suite.write_text(yaml.safe_dump(FIXED_SUITE), encoding="utf-8")
    run_dir = root / "run"
    assert main(["simulate", str(suite), "--output", str(run_dir)]) == 0

    clean = run_dir / "trials" / "trial_000" / "trace.json.gz"
    out = root / "out"
    assert main(["train", str(clean), "--output", str(out)]) == 0
    return {
        "root": root,
        "clean": clean,
        "faulty": run_dir / "trials" / "trial_001" / "trace.json.gz",
        "model": out / "model.json",
        "out": out,
    }


def test_help_lists_configuration_keys(capsys: pytest.CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit) as exit_info:
        main(["--help"])
    assert exit_info.value.code == 0
    out = capsys.readouterr().out
    assert "model.gbdt.n_trees" in out
    assert "control.theta_max" in out
    assert "Exit codes" in out


def test_train_writes_model_and_metrics(fixed_run: dict[str, Path]) -> None:
    assert fixed_run["model"].is_file()
    metrics = json.loads((fixed_run["out"] / "model_metrics.json").read_text())
    assert metrics["degenerate"]
    assert metrics["mape"] == pytest.approx(0.0, abs=1e-9)


def test_clean_trace_monitors_without_alerts(fixed_run: dict[str, Path], tmp_path: Path) -> None:
    alerts = tmp_path / "alerts.ndjson"
    code = main(
        ["monitor", str(fixed_run["clean"]), "--model", str(fixed_run["model"]), "--alerts", str(alerts), "--output", str(tmp_path)]
    )
    assert code == 0
    assert alerts.read_text() == ""


def test_faulty_trace_exits_with_alerts(fixed_run: dict[str, Path], tmp_path: Path) -> None:
    alerts = tmp_path / "alerts.ndjson"
    args = ["monitor", str(fixed_run["faulty"]), "--model", str(fixed_run["model"]), "--alerts", str(alerts)]
    assert main(args + ["--output", str(tmp_path), "--deep-dive"]) == 2

    records = [json.loads(line) for line in alerts.read_text().splitlines()]
    assert records[0]["episode_id"] == 1
    assert 250 <= records[0]["cycle"] < 280
    assert records[0]["strategy"] == "DynamicWindow"
    assert Path(records[0]["trace_handle"]).is_file()
    assert list((tmp_path / "deep_dive").glob("deep_dive_cycle_*.json.gz"))

    sentinel = read_trace(tmp_path / "deep_dive" / "sentinel.json.gz")
    assert {e.name for e in sentinel if e.kind is EventKind.SPAN} == {"run_batch", "process_batch_result", "get_next_batch_to_run"}
    assert any(e.kind is EventKind.COUNTER for e in sentinel)


def test_streamed_records_monitor_like_the_trace(
    fixed_run: dict[str, Path], tmp_path: Path, monkeypatch: pytest.MonkeyPatch, capsys: pytest.CaptureFixture[str]
) -> None:
    stream = tmp_path / "cycles.ndjson"
    code = main(["ingest", str(fixed_run["faulty"]), "--output", str(tmp_path / "ingest"), "--stream-out", str(stream)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["topology_ranks"] == 4
    assert (tmp_path / "ingest" / "merged.json.gz").is_file()

    monkeypatch.setattr(sys, "stdin", io.StringIO(stream.read_text()))
    alerts = tmp_path / "alerts.ndjson"
    code = main(["monitor", "-", "--model", str(fixed_run["model"]), "--alerts", str(alerts), "--output", str(tmp_path)])
    assert code == 2
    assert 250 <= json.loads(alerts.read_text().splitlines()[0])["cycle"] < 280


def test_diagnose_ranks_suspects_for_an_episode(fixed_run: dict[str, Path], tmp_path: Path) -> None:
    report_path = tmp_path / "rca.json"
    code = main(
        [
            "diagnose",
            str(fixed_run["faulty"]),
            "--model",
            str(fixed_run["model"]),
            "--alert",
            "1",
            "--report-out",
            str(report_path),
            "--output",
            str(tmp_path),
        ]
    )
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["episode_id"] == 1
    assert report["entries"]
    assert report["entries"][0]["score"] >= report["entries"][-1]["score"]


def test_unknown_episode_is_an_error(
    fixed_run: dict[str, Path], tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(
        ["diagnose", str(fixed_run["clean"]), "--model", str(fixed_run["model"]), "--alert", "1", "--output", str(tmp_path)]
    )
    assert code == 1
    assert _error(capsys)["error"] == "EpisodeNotFound"


def test_invalid_override_value_is_a_config_error(
    fixed_run: dict[str, Path], tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(["train", str(fixed_run["clean"]), "--set", "model.gbdt.n_trees=0", "--output", str(tmp_path)])
    assert code == 1
    error = _error(capsys)
    assert error["error"] == "ConfigError"
    assert error["exit_code"] == 1
    assert error["details"]["errors"][0]["loc"] == "model.gbdt.n_trees"


@pytest.mark.parametrize("override", ["no_equals_sign", "not_a_key=1"])
def test_malformed_or_unknown_override_is_rejected(
    fixed_run: dict[str, Path], tmp_path: Path, capsys: pytest.CaptureFixture[str], override: str
) -> None:
    code = main(["train", str(fixed_run["clean"]), "--set", override, "--output", str(tmp_path)])
    assert code == 1
    assert _error(capsys)["error"] == "ConfigError"


def test_unreadable_config_file_is_rejected(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed", encoding="utf-8")
    code = main(["train", str(tmp_path / "trace.json"), "--config", str(bad), "--output", str(tmp_path)])
    assert code == 1
    assert _error(capsys)["error"] == "ConfigError"


def test_missing_trace_is_an_input_error(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = main(["train", str(tmp_path / "missing.json"), "--output", str(tmp_path)])
    assert code == 1
    assert _error(capsys)["exit_code"] == 1


def test_report_needs_an_evaluated_run(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["report", str(tmp_path)]) == 1
    assert _error(capsys)["error"] == "ConfigError"


@pytest.mark.slow
def test_simulate_evaluate_report(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    suite = {
        "n_trials": 2,
        "cycles": 400,
        "train_cycles": 250,
        "onset": 300,
        "duration": 60,
        "families": ["CpuContention", "NvlinkSaturation"],
        "run": {"control": {"warmup": 20}},
    }
    suite_path = tmp_path / "suite.yaml"
    suite_path.write_text(yaml.safe_dump(suite), encoding="utf-8")
    run_dir = tmp_path / "run"

    assert main(["simulate", str(suite_path), "--output", str(run_dir)]) == 0
    assert json.loads(capsys.readouterr().out)["anomalous_cycles"] == 120

    assert main(["evaluate", str(run_dir), "--no-ablation"]) == 0
    assert (run_dir / "metrics.json").is_file()
    assert (run_dir / "heatmap.csv").is_file()
    capsys.readouterr()

    assert main(["report", str(run_dir)]) == 0
    assert "DynamicWindow" in capsys.readouterr().out


def test_stage_timings_are_logged(fixed_run: dict[str, Path]) -> None:
    log_dir = Path(os.environ["ITERSENTINEL_LOG_DIR"])
    text = "".join(path.read_text(encoding="utf-8") for path in log_dir.glob("itersentinel_*.log"))
    assert "Stage 'fit' took" in text
    assert "Command 'train' finished with exit code 0" in text
