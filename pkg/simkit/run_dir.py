"""
Run-directory layout of simulated suites.

    <run>/manifest.json            RunManifest, config hash and trial index
    <run>/config.yaml              suite configuration snapshot
    <run>/trials/trial_NNN/        trace.json.gz, labels.csv, faults.json
    <run>/metrics.json             written by evaluate
    <run>/heatmap.csv              trial x cycle smoothed error
    <run>/rca.json                 ranked suspects per trial
"""

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Any, Iterator

import yaml

from request.suite_config import FaultSpec, SuiteConfig, TrialSpec, load_suite_config
from response.benchmark_result import BenchmarkResult
from response.run_manifest import LAYOUT_VERSION, RunManifest, TrialEntry
from response.suspicion_report import SuspicionReport
from services.errors import ConfigError
from services.log import Log
from services.run_lock import RunLock
from simkit.benchmark import generate_trial
from simkit.synthesizer import LabeledDataset
from tracing.codec import read_trace, write_trace
from tracing.events import TraceEvent

MANIFEST = "manifest.json"
CONFIG = "config.yaml"
METRICS = "metrics.json"
HEATMAP = "heatmap.csv"
RCA = "rca.json"
LABEL_COLUMNS = ("cycle", "label", "stage", "B", "L_in", "L_out", "latency_s", "nominal_s")


def _json_text(document: Any) -> str:
    return json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def config_document(suite: SuiteConfig) -> dict[str, Any]:
    return suite.model_dump(mode="json")


def config_hash(suite: SuiteConfig) -> str:
    """SHA-256 of the canonical JSON form of the suite."""
    canonical = json.dumps(config_document(suite), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def labels_csv(dataset: LabeledDataset) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(LABEL_COLUMNS)
    for i, (label, workload) in enumerate(zip(dataset.labels, dataset.workloads)):
        writer.writerow(
            [
                i,
                int(label),
                workload.stage.value,
                workload.B,
                workload.L_in,
                workload.L_out,
                repr(dataset.latencies[i]),
                repr(dataset.nominal[i]),
            ]
        )
    return buffer.getvalue()


def read_labels(path: Path) -> list[bool]:
    """Per-cycle labels in cycle order."""
    with open(path, encoding="utf-8", newline="") as handle:
        rows = sorted(csv.DictReader(handle), key=lambda row: int(row["cycle"]))
    return [row["label"] == "1" for row in rows]


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_trial(trial_dir: Path, trial: TrialSpec, dataset: LabeledDataset, run_dir: Path) -> TrialEntry:
    trial_dir.mkdir(parents=True, exist_ok=True)
    trace_path = write_trace(trial_dir / "trace.json.gz", dataset.events)
    labels_path = trial_dir / "labels.csv"
    labels_path.write_text(labels_csv(dataset), encoding="utf-8")
    faults_path = trial_dir / "faults.json"
    faults_path.write_text(_json_text([fault.model_dump(mode="json") for fault in trial.faults]), encoding="utf-8")
    return TrialEntry(
        trial_id=trial.trial_id,
        seed=trial.seed,
        families=[fault.family.value for fault in trial.faults],
        n_cycles=dataset.n_cycles,
        anomalous_cycles=sum(dataset.labels),
        trace=trace_path.relative_to(run_dir).as_posix(),
        labels=labels_path.relative_to(run_dir).as_posix(),
        faults=faults_path.relative_to(run_dir).as_posix(),
        trace_sha256=_sha256(trace_path),
    )


def simulate_run(suite: SuiteConfig, run_dir: Path) -> RunManifest:
    """
    Generate every trial of a suite into ``run_dir``.

    Same suite, same bytes: traces are written with a fixed gzip header
    and the manifest carries no timestamps.

    Raises
    ------
    RunDirectoryLocked
        If another run holds the directory.
    UnlabeledEffect, ConfigConflict
        If a trial's faults are invalid.
    """
    run_dir = Path(run_dir)
    with RunLock(run_dir):
        (run_dir / CONFIG).write_text(
            yaml.safe_dump(config_document(suite), sort_keys=True, allow_unicode=True), encoding="utf-8"
        )
        manifest = RunManifest(config_hash=config_hash(suite), seed=suite.seed)
        for trial in suite.resolved_trials():
            dataset = generate_trial(suite, trial)
            entry = write_trial(run_dir / "trials" / f"trial_{trial.trial_id:03d}", trial, dataset, run_dir)
            manifest.trials.append(entry)
            Log.info(f"Wrote trial {trial.trial_id}: {entry.n_cycles} cycles, {entry.anomalous_cycles} anomalous")
        (run_dir / MANIFEST).write_text(_json_text(manifest.model_dump(mode="json")), encoding="utf-8")
    return manifest


def read_manifest(run_dir: Path) -> RunManifest:
    """
    Raises
    ------
    ConfigError
        If the directory holds no manifest or one of another layout version.
    """
    path = Path(run_dir) / MANIFEST
    if not path.is_file():
        raise ConfigError(f"{run_dir} is not a run directory (no {MANIFEST})", {"run_dir": str(run_dir)})
    manifest = RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    if manifest.layout_version != LAYOUT_VERSION:
        raise ConfigError(
            f"Run directory layout {manifest.layout_version} is not supported (expected {LAYOUT_VERSION})",
            {"found": manifest.layout_version, "expected": LAYOUT_VERSION},
        )
    return manifest


def load_run_suite(run_dir: Path, overrides: list[str] | None = None) -> SuiteConfig:
    return load_suite_config(Path(run_dir) / CONFIG, overrides)


def iter_trials(run_dir: Path, manifest: RunManifest) -> Iterator[tuple[TrialSpec, list[TraceEvent], list[bool]]]:
    """Load trials one at a time, in manifest order."""
    run_dir = Path(run_dir)
    for entry in manifest.trials:
        faults = json.loads((run_dir / entry.faults).read_text(encoding="utf-8"))
        trial = TrialSpec(
            trial_id=entry.trial_id,
            seed=entry.seed,
            faults=[FaultSpec.model_validate(fault) for fault in faults],
        )
        yield trial, read_trace(run_dir / entry.trace), read_labels(run_dir / entry.labels)


def heatmap_csv(result: BenchmarkResult) -> str:
    """Matrix with one row per trial and one column per monitored cycle; blanks where unmonitored."""
    columns = sorted({cycle for row in result.heatmap for cycle in row.values})
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["trial_id", *columns])
    for row in sorted(result.heatmap, key=lambda r: r.trial_id):
        writer.writerow([row.trial_id, *(repr(row.values[c]) if c in row.values else "" for c in columns)])
    return buffer.getvalue()


def write_evaluation(run_dir: Path, result: BenchmarkResult) -> dict[str, Path]:
    run_dir = Path(run_dir)
    paths = {"metrics": run_dir / METRICS, "heatmap": run_dir / HEATMAP, "rca": run_dir / RCA}
    paths["metrics"].write_text(
        _json_text(result.model_dump(mode="json", exclude={"heatmap", "reports"})), encoding="utf-8"
    )
    paths["heatmap"].write_text(heatmap_csv(result), encoding="utf-8")
    paths["rca"].write_text(
        _json_text({str(trial_id): report.model_dump(mode="json") for trial_id, report in sorted(result.reports.items())}),
        encoding="utf-8",
    )
    return paths


def read_evaluation(run_dir: Path) -> BenchmarkResult:
    """
    Raises
    ------
    ConfigError
        If the run has not been evaluated yet.
    """
    run_dir = Path(run_dir)
    metrics_path = run_dir / METRICS
    if not metrics_path.is_file():
        raise ConfigError(f"{run_dir} has no {METRICS}; run evaluate first", {"run_dir": str(run_dir)})
    result = BenchmarkResult.model_validate_json(metrics_path.read_text(encoding="utf-8"))
    rca_path = run_dir / RCA
    if rca_path.is_file():
        reports = json.loads(rca_path.read_text(encoding="utf-8"))
        result.reports = {int(key): SuspicionReport.model_validate(value) for key, value in reports.items()}
    return result
