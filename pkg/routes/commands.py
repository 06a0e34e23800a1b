"""Subcommand handlers. Each takes the parsed arguments and returns an exit code."""

import json
import sys
from argparse import Namespace
from pathlib import Path
from typing import Any

import numpy as np

from baseline.ablation import ablation_compare
from baseline.features import build_matrix, extra_names_of, feature_schema
from baseline.gbdt import fit
from baseline.metrics import chronological_split, evaluate, unseen_workload_split
from baseline.persistence import load_model, save_model
from cycles.engine import CycleTable, build_cycles
from detector.monitor import Monitor, monitor_stream, table_to_stream
from detector.sink import AlertSink
from middleware.error_handler import EXIT_ALERTS, EXIT_OK
from rca.diagnosis import diagnose as diagnose_episode
from request.run_config import RunConfig, load_run_config
from request.suite_config import load_suite_config
from routes import tables
from services.env import Env
from services.errors import EpisodeNotFound, InvalidTrace
from services.log import Log
from services.run_lock import RunLock
from simkit.benchmark import run_benchmark
from simkit.run_dir import iter_trials, load_run_suite, read_evaluation, read_manifest, simulate_run, write_evaluation
from tracing.codec import write_trace
from tracing.ingest import IngestResult, ingest


def run_config(args: Namespace, inputs: list[Path] | None = None) -> RunConfig:
    """Defaults < config file < environment overrides < --set overrides < dedicated flags."""
    return load_run_config(
        Env.config_path(getattr(args, "config", None)),
        getattr(args, "set", None) or [],
        seed=getattr(args, "seed", None),
        output_dir=getattr(args, "output", None),
        inputs=[str(p) for p in inputs] if inputs else None,
    )


def _print_json(document: Any) -> None:
    sys.stdout.write(json.dumps(document, indent=2, sort_keys=True, default=str) + "\n")


def _write_json(path: Path, document: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def load_traces(paths: list[Path], config: RunConfig, beacon_file: Path | None = None) -> IngestResult:
    """
    Ingest traces with the configured calibration.

    Raises
    ------
    InvalidTrace
        If any file has validation errors.
    """
    result = ingest(
        paths,
        reference_domain=config.calibration.reference_domain,
        tolerance_ns=config.calibration.tolerance_ns,
        estimate_drift=config.calibration.estimate_drift,
        beacon_file=beacon_file,
    )
    if not result.ok:
        failed = {path: len(report.errors) for path, report in result.reports.items() if not report.ok}
        raise InvalidTrace(
            f"Validation failed for {len(failed)} of {len(paths)} files",
            {
                "files": failed,
                "errors": [
                    issue.model_dump(exclude_none=True)
                    for report in result.reports.values()
                    for issue in report.errors[:20]
                ],
            },
        )
    return result


def _cycle_table(path: Path, config: RunConfig) -> tuple[IngestResult, CycleTable]:
    with Log.stage("ingest"):
        result = load_traces([path], config)
    with Log.stage("segment"):
        return result, build_cycles(result.events, config.cycles)


def ingest_command(args: Namespace) -> int:
    config = run_config(args, args.traces)
    with RunLock(config.output_dir):
        result = load_traces(config.inputs, config, args.beacons)
        out = Path(args.out) if args.out else config.output_dir / "merged.json.gz"
        write_trace(out, result.events)
        if args.stream_out:
            table = build_cycles(result.events, config.cycles)
            Path(args.stream_out).write_text("".join(line + "\n" for line in table_to_stream(table)), encoding="utf-8")
    _print_json(
        {
            "output": str(out),
            "events": len(result.events),
            "correlation_pairs": len(result.correlations.pairs),
            "orphan_device_events": len(result.correlations.orphans),
            "topology_ranks": len(result.topology),
            "calibration": result.calibration.model_dump(mode="json"),
            "validation": {path: report.model_dump(mode="json") for path, report in result.reports.items()},
        }
    )
    return EXIT_OK


def train_command(args: Namespace) -> int:
    config = run_config(args, [args.trace])
    _, table = _cycle_table(args.trace, config)
    modeled = table.modeled(config.model.include_prefill)
    workloads = [w for _, w in modeled]
    y = np.array([c.latency_s for c, _ in modeled])
    schema = feature_schema(config.model.feature_set, extra_names_of(workloads))
    X = build_matrix(workloads, schema)

    if args.split == "unseen":
        train_idx, test_idx = unseen_workload_split(workloads, args.test_fraction, config.seed)
    else:
        train_idx, test_idx = chronological_split(len(y), args.test_fraction)
    with Log.stage("fit"):
        model = fit(X[train_idx], y[train_idx], schema, config.model.gbdt)
    with Log.stage("evaluate"):
        metrics = evaluate(
            model, X[test_idx], y[test_idx], training=(X[train_idx], y[train_idx]), step=config.model.convergence_step
        )

    with RunLock(config.output_dir):
        model_path = save_model(model, Path(args.model_out) if args.model_out else config.output_dir / "model.json")
        _write_json(config.output_dir / "model_metrics.json", metrics.model_dump(mode="json", exclude={"relative_errors"}))
        if args.ablation:
            ablation = ablation_compare(workloads, y.tolist(), config.model.gbdt, seed=config.seed)
            _write_json(config.output_dir / "ablation.json", ablation.model_dump(mode="json"))
            print(tables.ablation_table(ablation))
    print(f"Model written to {model_path} ({len(model.trees)} trees, features {list(schema.names)})")
    print(tables.model_metrics_table(metrics))
    return EXIT_OK


def monitor_command(args: Namespace) -> int:
    streaming = str(args.source) == "-"
    config = run_config(args, None if streaming else [Path(args.source)])
    model = load_model(args.model)

    alerts_path = Path(args.alerts) if args.alerts else None
    if alerts_path is not None:
        alerts_path.parent.mkdir(parents=True, exist_ok=True)
        alerts_path.write_text("", encoding="utf-8")
    deep_dive_dir = config.output_dir / "deep_dive" if args.deep_dive and not streaming else None

    with AlertSink(alerts_path) as sink:
        monitor = Monitor(model, config, sink, deep_dive_dir)
        if streaming:
            observed = sum(1 for _ in monitor_stream(monitor, sys.stdin))
        else:
            result, table = _cycle_table(Path(args.source), config)
            observed = len(monitor.run_table(table))
            for path in monitor.write_retention(result.events, table.cycles):
                Log.info(f"Deep-dive slice written to {path}")
            sentinel = monitor.write_sentinel(result.events)
            if sentinel is not None:
                Log.info(f"Sentinel trace written to {sentinel}")

    alerts = monitor.state.alert_count
    Log.info(f"Monitored {observed} cycles, {alerts} alerts")
    return EXIT_ALERTS if alerts else EXIT_OK


def diagnose_command(args: Namespace) -> int:
    config = run_config(args, [args.trace])
    result, table = _cycle_table(args.trace, config)
    monitor = Monitor(load_model(args.model), config)
    decisions = monitor.run_table(table)
    cycles = [c.index for c, _ in table.modeled(config.model.include_prefill)]

    position = next(
        (i for i, d in enumerate(decisions) if d.alert is not None and d.alert.episode_id == args.alert), None
    )
    if position is None:
        raise EpisodeNotFound(
            f"No alert episode {args.alert}; the trace has {monitor.state.alert_count} episodes",
            {"episode": args.alert, "episodes": monitor.state.alert_count},
        )

    report = diagnose_episode(
        result.events,
        table,
        cycles,
        [d.exceeded for d in decisions],
        cycles[position],
        config.rca,
        config.escalation,
        result.topology,
        args.alert,
    )
    out = Path(args.report_out) if args.report_out else config.output_dir / f"rca_episode_{args.alert:03d}.json"
    _write_json(out, report.model_dump(mode="json"))
    print(f"Episode {args.alert}: alert at cycle {report.alert_cycle}, "
          f"{len(report.normal_cycles)} normal / {len(report.abnormal_cycles)} abnormal cycles")
    print(tables.suspicion_table(report))
    return EXIT_OK


def simulate_command(args: Namespace) -> int:
    overrides = list(getattr(args, "set", None) or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    suite = load_suite_config(args.suite, overrides)
    run_dir = Path(args.output) if args.output else suite.run.output_dir
    with Log.stage("simulate"):
        manifest = simulate_run(suite, run_dir)
    _print_json(
        {
            "run_dir": str(run_dir),
            "config_hash": manifest.config_hash,
            "trials": len(manifest.trials),
            "cycles": sum(t.n_cycles for t in manifest.trials),
            "anomalous_cycles": sum(t.anomalous_cycles for t in manifest.trials),
        }
    )
    return EXIT_OK


def evaluate_command(args: Namespace) -> int:
    manifest = read_manifest(args.run_dir)
    suite = load_run_suite(args.run_dir, getattr(args, "set", None) or [])
    with RunLock(args.run_dir):
        with Log.stage("benchmark"):
            result = run_benchmark(suite, iter_trials(args.run_dir, manifest), with_ablation=not args.no_ablation)
        result.config_hash = manifest.config_hash
        paths = write_evaluation(args.run_dir, result)
    print(tables.strategy_table(result.strategies))
    print(f"Metrics: {paths['metrics']}  heatmap: {paths['heatmap']}  rca: {paths['rca']}")
    return EXIT_OK


def report_command(args: Namespace) -> int:
    print(tables.benchmark_report(read_evaluation(args.run_dir)))
    return EXIT_OK


COMMANDS = {
    "ingest": ingest_command,
    "train": train_command,
    "monitor": monitor_command,
    "diagnose": diagnose_command,
    "simulate": simulate_command,
    "evaluate": evaluate_command,
    "report": report_command,
}
