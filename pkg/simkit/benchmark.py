"""Labeled benchmark: train, detect and localize across simulated trials."""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from baseline.ablation import ablation_compare
from baseline.features import build_matrix, extra_names_of, feature_schema
from baseline.gbdt import GbdtModel, fit, predict
from cycles.engine import build_cycles
from cycles.segmenter import Cycle
from cycles.workload import WorkloadFeatures
from detector.control import Decision, DetectorState, run_chart
from detector.evaluation import LabeledStream, evaluate_strategies
from detector.residuals import ppe_array
from rca.diagnosis import diagnose
from request.run_config import Strategy
from request.suite_config import FaultFamily, SuiteConfig, TrialSpec
from response.benchmark_result import BenchmarkResult, FamilyRca, HeatmapRow, TrialOutcome
from response.suspicion_report import SuspicionReport
from services.errors import InsufficientCycles, InsufficientData
from services.log import Log
from simkit.faults import FAULT_EFFECTS
from simkit.synthesizer import LabeledDataset, synthesize_trace
from simkit.workload import generate_workload
from tracing.events import TraceEvent
from tracing.ingest import align_events
from tracing.topology import resolve_topology

SIGNIFICANCE = 0.01


@dataclass
class TrialRun:
    outcome: TrialOutcome
    stream: LabeledStream
    calibration: list[float]
    heatmap: HeatmapRow
    report: SuspicionReport | None = None
    ablation_input: tuple[list[WorkloadFeatures], list[float]] | None = field(default=None, repr=False)


def generate_trial(suite: SuiteConfig, trial: TrialSpec) -> LabeledDataset:
    """Workload and trace of one trial, fully determined by the trial seed."""
    workloads = generate_workload(suite.profile, suite.cycles, trial.seed)
    return synthesize_trace(workloads, suite.ground_truth, trial.faults, trial.seed, suite.ranks, suite.nodes)


def train_baseline(train: Sequence[tuple[Cycle, WorkloadFeatures]], suite: SuiteConfig) -> GbdtModel:
    """
    Fit the baseline on the clean prefix of a trial.

    Raises
    ------
    InsufficientData
        If the prefix holds too few modeled cycles.
    """
    model_config = suite.run.model
    workloads = [w for _, w in train]
    schema = feature_schema(model_config.feature_set, extra_names_of(workloads))
    return fit(build_matrix(workloads, schema), [c.latency_s for c, _ in train], schema, model_config.gbdt)


def _pick_alert(decisions: Sequence[Decision], onset: int | None) -> int | None:
    """Position of the alert that opens the fault episode, or of the first alert."""
    positions = [i for i, decision in enumerate(decisions) if decision.alert is not None]
    if not positions:
        return None
    if onset is not None:
        return next((p for p in positions if p >= onset), positions[-1])
    return positions[0]


def run_trial(
    trial: TrialSpec,
    events: Sequence[TraceEvent],
    labels: Sequence[bool],
    suite: SuiteConfig,
) -> TrialRun:
    """
    Run the full pipeline on one trial trace.

    Calibrates and segments the trace, trains on decode cycles before
    ``suite.train_cycles``, monitors the rest under the dynamic-window
    chart and ranks suspects for the alert opening the fault episode.

    Parameters
    ----------
    trial : TrialSpec
        Trial identity and injected faults.
    events : Sequence[TraceEvent]
        Raw trace, device clocks not yet calibrated.
    labels : Sequence[bool]
        Ground truth per cycle index.
    suite : SuiteConfig
        Suite and run configuration.
    """
    run = suite.run
    aligned, _ = align_events(
        events, run.calibration.reference_domain, run.calibration.tolerance_ns, run.calibration.estimate_drift
    )
    table = build_cycles(aligned, run.cycles)
    modeled = table.modeled(run.model.include_prefill)
    train = [(c, w) for c, w in modeled if c.index < suite.train_cycles]
    monitored = [(c, w) for c, w in modeled if c.index >= suite.train_cycles]
    model = train_baseline(train, suite)

    cycles = [c.index for c, _ in monitored]
    actual = np.array([c.latency_s for c, _ in monitored])
    predicted = predict(model, build_matrix([w for _, w in monitored], model.features))
    errors = ppe_array(actual, predicted, run.control.epsilon).tolist() if monitored else []
    stream = LabeledStream(errors=errors, labels=[bool(labels[i]) for i in cycles], trial_id=trial.trial_id, cycles=cycles)

    control = run.control.model_copy(update={"strategy": Strategy.DYNAMIC_WINDOW})
    state = DetectorState.from_calibration(model.calibration_residuals, control, run.escalation)
    decisions = run_chart(errors, state, cycles)
    fault = trial.faults[0] if trial.faults else None
    outcome = TrialOutcome(
        trial_id=trial.trial_id,
        seed=trial.seed,
        family=fault.family.value if fault else None,
        onset=fault.onset if fault else None,
        n_monitored=len(cycles),
        ucl=state.ucl,
        alerts=state.alert_count,
        first_alert_cycle=state.alert_log[0].cycle if state.alert_log else None,
    )
    heatmap = HeatmapRow(trial_id=trial.trial_id, values={c: d.statistic for c, d in zip(cycles, decisions)})

    report = None
    position = _pick_alert(decisions, stream.onset)
    if fault is not None and position is not None:
        try:
            report = diagnose(
                aligned,
                table,
                cycles,
                [d.exceeded for d in decisions],
                cycles[position],
                run.rca,
                run.escalation,
                resolve_topology(aligned),
                decisions[position].alert.episode_id,
            )
        except InsufficientCycles as exc:
            Log.warning(f"Trial {trial.trial_id}: no diagnosis, {exc.message}")

    if report is not None and report.top is not None:
        top = report.top
        outcome.rca_top = top.event_class
        outcome.rca_p_value = top.p_value
        outcome.rca_hit = top.event_class == FAULT_EFFECTS[fault.family].target_class
        if fault.family is FaultFamily.NVLINK_SATURATION and suite.ranks > 1:
            attribution = top.attribution
            outcome.straggler = attribution.label() if attribution else None
            outcome.straggler_rank = attribution.rank if attribution else None
            outcome.straggler_hit = attribution is not None and attribution.rank == fault.slow_rank

    Log.info(
        f"Trial {trial.trial_id}: {len(cycles)} monitored cycles, {outcome.alerts} alerts, "
        f"top suspect {outcome.rca_top}"
    )
    return TrialRun(
        outcome=outcome,
        stream=stream,
        calibration=list(model.calibration_residuals),
        heatmap=heatmap,
        report=report,
        ablation_input=([w for _, w in train], [c.latency_s for c, _ in train]),
    )


def _family_rca(outcomes: Iterable[TrialOutcome]) -> list[FamilyRca]:
    grouped: dict[str, list[TrialOutcome]] = defaultdict(list)
    for outcome in outcomes:
        if outcome.family is not None:
            grouped[outcome.family].append(outcome)
    rows = []
    for family in sorted(grouped):
        members = grouped[family]
        hits = [o for o in members if o.rca_hit]
        rows.append(
            FamilyRca(
                family=family,
                trials=len(members),
                top1_hits=len(hits),
                significant_hits=sum(1 for o in hits if o.rca_p_value is not None and o.rca_p_value < SIGNIFICANCE),
                hit_rate=len(hits) / len(members),
            )
        )
    return rows


def aggregate(runs: Sequence[TrialRun], suite: SuiteConfig, with_ablation: bool = True) -> BenchmarkResult:
    """Reduce trial runs, keyed by trial id, into one result."""
    runs = sorted(runs, key=lambda r: r.outcome.trial_id)
    result = BenchmarkResult(
        trials=[r.outcome for r in runs],
        heatmap=[r.heatmap for r in runs],
        rca=_family_rca(r.outcome for r in runs),
        reports={r.outcome.trial_id: r.report for r in runs if r.report is not None},
    )
    labeled = [r for r in runs if any(r.stream.labels)]
    if labeled:
        result.strategies = evaluate_strategies(
            [r.stream for r in runs], [r.calibration for r in runs], suite.run.control, tuple(Strategy)
        )
    straggler = [r.outcome.straggler_hit for r in runs if r.outcome.straggler_hit is not None]
    if straggler:
        result.straggler_hit_rate = sum(straggler) / len(straggler)

    if with_ablation and runs and runs[0].ablation_input is not None:
        workloads, latencies = runs[0].ablation_input
        try:
            result.ablation = ablation_compare(workloads, latencies, suite.run.model.gbdt, seed=suite.seed)
        except InsufficientData as exc:
            Log.warning(f"Ablation skipped: {exc.message}")
    return result


def run_benchmark(
    suite: SuiteConfig,
    trials: Iterable[tuple[TrialSpec, Sequence[TraceEvent], Sequence[bool]]] | None = None,
    with_ablation: bool = True,
) -> BenchmarkResult:
    """
    Run every trial of a suite and aggregate detection and RCA quality.

    Parameters
    ----------
    suite : SuiteConfig
        Declarative suite.
    trials : Iterable[tuple[TrialSpec, Sequence[TraceEvent], Sequence[bool]]] | None, optional
        Pre-generated (trial, events, labels); generated in memory when omitted.
    with_ablation : bool, optional
        Also compare feature sets and models on the first trial's clean prefix.

    Returns
    -------
    BenchmarkResult
        Strategy table, per-family RCA hit rates, straggler hit rate and
        heatmap rows.

    Raises
    ------
    UnlabeledEffect, ConfigConflict
        If a trial's faults are invalid.
    """
    if trials is None:
        trials = ((trial, *_dataset_parts(generate_trial(suite, trial))) for trial in suite.resolved_trials())

    runs = [run_trial(trial, events, labels, suite) for trial, events, labels in trials]
    result = aggregate(runs, suite, with_ablation)
    Log.info(f"Benchmark finished: {len(runs)} trials")
    return result


def _dataset_parts(dataset: LabeledDataset) -> tuple[list[TraceEvent], list[bool]]:
    return dataset.events, dataset.labels
