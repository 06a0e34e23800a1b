from __future__ import annotations

import io
import json
import math
import tracemalloc

import numpy as np
import pytest

from baseline.features import feature_schema
from baseline.gbdt import fit
from cycles.engine import build_cycles
from detector.control import DetectorState, run_chart
from detector.escalation import EscalationManager, Mode, deep_dive_events, sentinel_view
from detector.evaluation import LabeledStream, evaluate_strategies, score_predictions
from detector.monitor import Monitor, monitor_stream, parse_stream_record, table_to_stream
from detector.residuals import compute_ucl, ppe, ppe_array, ucl_from_stats
from detector.sink import AlertSink
from request.run_config import ControlConfig, EscalationPolicy, RunConfig, Strategy
from request.suite_config import SuiteConfig
from response.alert import Alert, RetentionWindow
from services.errors import InsufficientCalibration, MissingWorkloadArgs, NoLabels, NonPositiveLatency
from simkit.benchmark import train_baseline
from simkit.synthesizer import LabeledDataset
from tests.factories import DEVICE, counter, decode_cycles, span
from tracing.codec import read_trace
from tracing.events import Category, EventKind
from tracing.ingest import align_events


def _window_oracle(errors: list[float], window: int, limit: float, warmup: int) -> list[int]:
    """Alert positions recomputed from scratch at every position."""
    alerts = []
    previous = False
    for i in range(len(errors)):
        values = errors[max(0, i - window + 1) : i + 1]
        exceeded = i >= warmup and math.fsum(values) / len(values) > limit
        if exceeded and not previous:
            alerts.append(i)
        previous = exceeded
    return alerts


def _alert_positions(errors: list[float], state: DetectorState) -> list[int]:
    return [i for i, decision in enumerate(run_chart(errors, state)) if decision.alert is not None]


def test_overprediction_clamps_to_zero() -> None:
    assert ppe(1.0e-3, 1.2e-3) == 0.0
    assert ppe(2.0e-3, 2.0e-3) == 0.0


def test_underprediction_is_relative_error() -> None:
    assert ppe(1.5e-3, 1.2e-3, epsilon=0.0) == pytest.approx(0.2)


def test_non_positive_latency_raises() -> None:
    with pytest.raises(NonPositiveLatency):
        ppe(0.0, 1.0)
    with pytest.raises(NonPositiveLatency):
        ppe_array(np.array([1.0, -1.0]), np.array([1.0, 1.0]))


def test_ppe_stays_below_one_and_grows_with_latency() -> None:
    actual = np.geomspace(1e-6, 10.0, 200)
    errors = ppe_array(actual, np.full(200, 1e-3))
    assert np.all((errors >= 0) & (errors < 1))
    assert np.all(np.diff(errors) >= 0)


def test_ucl_from_mean_and_sigma() -> None:
    assert ucl_from_stats(0.02, 0.01, k=3) == pytest.approx(0.05)
    assert ucl_from_stats(0.2, 0.2, k=3, theta_max=0.4) == 0.4


def test_zero_residuals_floor_the_ucl() -> None:
    assert compute_ucl([0.0] * 40, theta_max=0.4, min_ucl=0.02) == 0.02


def test_ucl_needs_thirty_residuals() -> None:
    with pytest.raises(InsufficientCalibration):
        compute_ucl([0.01] * 29)


def test_zero_residuals_never_alert() -> None:
    state = DetectorState(ControlConfig(warmup=0), ucl=0.05)
    assert _alert_positions([0.0] * 10, state) == []


def test_fixed_point_alerts_on_the_exceeding_cycle() -> None:
    state = DetectorState(ControlConfig(strategy=Strategy.FIXED_POINT, threshold=0.15, warmup=0))
    decisions = run_chart([0.0, 0.1, 0.16, 0.0], state)
    assert [d.alert is not None for d in decisions] == [False, False, True, False]
    assert decisions[2].alert.ebar == pytest.approx(0.16)
    assert decisions[2].alert.strategy == "FixedPoint"


def test_window_mean_must_strictly_exceed_limit() -> None:
    errors = [0.0] * 50 + [0.5] * 20
    state = DetectorState(ControlConfig(warmup=0), ucl=0.05)
    # At the jump the window mean equals the limit
    assert _alert_positions(errors, state) == [51]


def test_dynamic_strategy_needs_a_ucl() -> None:
    with pytest.raises(ValueError):
        DetectorState(ControlConfig(strategy=Strategy.DYNAMIC_WINDOW))


def test_detector_is_silent_during_warmup() -> None:
    state = DetectorState(ControlConfig(strategy=Strategy.FIXED_POINT, warmup=5))
    decisions = run_chart([0.9] * 8, state)
    assert [d.armed for d in decisions] == [False] * 5 + [True] * 3
    assert [i for i, d in enumerate(decisions) if d.alert] == [5]


def test_sustained_excess_is_one_episode() -> None:
    state = DetectorState(ControlConfig(strategy=Strategy.FIXED_POINT, warmup=0))
    run_chart([0.5] * 10 + [0.0] * 3 + [0.5] * 2, state)
    assert [alert.episode_id for alert in state.alert_log] == [1, 2]
    assert [alert.cycle for alert in state.alert_log] == [0, 13]


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("window", [1, 4, 10])
def test_chart_matches_brute_force(seed: int, window: int) -> None:
    rng = np.random.default_rng(seed)
    errors = np.abs(rng.normal(0.0, 0.03, 3_000))
    bursts = rng.integers(0, 3_000, 12)
    for start in bursts:
        errors[start : start + rng.integers(1, 40)] += rng.uniform(0.05, 0.8)
    errors = np.minimum(errors, 0.99).tolist()

    state = DetectorState(ControlConfig(window=window, warmup=25), ucl=0.08)
    expected = _window_oracle(errors, window, 0.08, 25)
    assert _alert_positions(errors, state) == expected

    replay = DetectorState(ControlConfig(window=window, warmup=25), ucl=0.08)
    run_chart(errors, replay)
    assert [a.model_dump() for a in replay.alert_log] == [a.model_dump() for a in state.alert_log]


@pytest.mark.slow
def test_chart_matches_brute_force_on_long_streams() -> None:
    rng = np.random.default_rng(2026)
    for _ in range(100):
        window = int(rng.integers(1, 21))
        limit = float(rng.uniform(0.04, 0.2))
        errors = np.abs(rng.normal(0.0, 0.03, 10_000))
        for start in rng.integers(0, 10_000, 30):
            errors[start : start + rng.integers(1, 60)] += rng.uniform(0.02, 0.8)
        errors = np.minimum(errors, 0.99).tolist()

        state = DetectorState(ControlConfig(window=window, warmup=100), ucl=limit)
        assert _alert_positions(errors, state) == _window_oracle(errors, window, limit, 100)


def test_clean_stream_alert_rate_stays_under_calibration_tail() -> None:
    rng = np.random.default_rng(8)
    calibration = np.abs(rng.normal(0.0, 0.03, 2_000))
    ucl = compute_ucl(calibration.tolist())
    tail = float(np.mean(calibration > ucl))

    errors = rng.choice(calibration, 50_000).tolist()
    state = DetectorState(ControlConfig(warmup=100), ucl=ucl)
    run_chart(errors, state)
    assert state.alert_count / (len(errors) - 100) <= tail


def test_escalation_retains_window_around_alert() -> None:
    manager = EscalationManager(EscalationPolicy(pre_roll=5, post_roll=20))
    assert manager.escalate(100)
    assert manager.mode is Mode.DEEP_DIVE
    assert (manager.current.start, manager.current.end) == (95, 120)


def test_alert_during_deep_dive_extends_window() -> None:
    manager = EscalationManager(EscalationPolicy(pre_roll=5, post_roll=20))
    manager.escalate(100)
    assert not manager.escalate(110)
    assert len(manager.windows) == 1
    assert (manager.windows[0].start, manager.windows[0].end) == (95, 130)
    assert manager.windows[0].alerts == [100, 110]
    assert list(manager.actions) == [100]


def test_deep_dive_reverts_after_post_roll() -> None:
    manager = EscalationManager(EscalationPolicy(pre_roll=5, post_roll=20))
    manager.escalate(100)
    manager.advance(120)
    assert manager.mode is Mode.DEEP_DIVE
    manager.advance(121)
    assert manager.mode is Mode.SENTINEL
    assert manager.escalate(150)
    assert list(manager.actions) == [100, 150]


def test_escalation_keeps_only_recent_windows() -> None:
    manager = EscalationManager(EscalationPolicy(pre_roll=0, post_roll=1, retained_windows=3))
    for cycle in range(0, 1_000, 10):
        assert manager.escalate(cycle)
    assert [window.start for window in manager.windows] == [970, 980, 990]
    assert list(manager.actions) == [970, 980, 990]


def test_detector_drives_escalation() -> None:
    state = DetectorState(ControlConfig(strategy=Strategy.FIXED_POINT, warmup=0), policy=EscalationPolicy(post_roll=3))
    run_chart([0.0, 0.5, 0.0, 0.0, 0.0, 0.0], state)
    assert list(state.escalation.actions) == [1]
    assert state.mode is Mode.SENTINEL


def test_retained_slice_and_sentinel_view() -> None:
    events = decode_cycles(10)
    kernel = span(100, "gemm", 2_200_000, 50_000, category=Category.GPU_KERNEL, source=DEVICE)
    sample = counter(101, "cpu_usage", 2_300_000, 40.0)
    table = build_cycles(events)

    kept = deep_dive_events(events + [kernel, sample], table.cycles, RetentionWindow(start=2, end=3))
    assert {e.start_ts for e in kept} >= {2_000_000, 3_100_000, 2_200_000}
    assert all(2_000_000 <= e.start_ts < 4_000_000 for e in kept)

    sentinel = sentinel_view(events + [kernel, sample], ["run_batch", "get_next_batch_to_run"])
    assert kernel not in sentinel
    assert sample in sentinel
    assert len(sentinel) == len(events) + 1


def test_always_alerting_detector_has_full_recall_and_fpr() -> None:
    stream = LabeledStream(errors=[0.0] * 10, labels=[False] * 5 + [True] * 5)
    metrics = score_predictions("always", [[True] * 10], [stream])
    assert metrics.recall == 1.0
    assert metrics.fpr == 1.0
    assert metrics.precision == 0.5
    assert metrics.mean_lag == 0.0


def test_strategy_evaluation_needs_labels() -> None:
    with pytest.raises(NoLabels):
        evaluate_strategies([], [0.01] * 40)


def _fault_streams(n: int = 6) -> tuple[list[LabeledStream], list[float]]:
    rng = np.random.default_rng(11)
    calibration = np.maximum(0.0, rng.normal(0.0, 0.03, 200)).tolist()
    streams = []
    for trial in range(n):
        errors = np.maximum(0.0, rng.normal(0.0, 0.03, 200))
        errors[100:130] = 0.75
        labels = [100 <= i < 130 for i in range(200)]
        streams.append(LabeledStream(errors=errors.tolist(), labels=labels, trial_id=trial))
    return streams, calibration


def test_strategies_on_injected_faults() -> None:
    streams, calibration = _fault_streams()
    table = evaluate_strategies(streams, calibration, ControlConfig(warmup=20))
    assert [row.strategy for row in table.rows] == [s.value for s in Strategy]

    dynamic = table.get("DynamicWindow")
    assert dynamic.recall == 1.0
    assert dynamic.mean_lag == 0.0
    assert dynamic.detected == len(streams)

    fixed = table.get("FixedWindow")
    assert fixed.mean_lag >= dynamic.mean_lag
    assert fixed.fpr <= dynamic.fpr


@pytest.fixture(scope="module")
def trained(small_suite: SuiteConfig, small_dataset: LabeledDataset):
    aligned, _ = align_events(small_dataset.events)
    table = build_cycles(aligned)
    train = [(c, w) for c, w in table.modeled() if c.index < small_suite.train_cycles]
    return train_baseline(train, small_suite), table, aligned


def test_monitor_flags_injected_fault(trained, small_suite: SuiteConfig) -> None:
    model, table, _ = trained
    monitor = Monitor(model, small_suite.run)
    monitor.run_table(table)
    assert any(300 <= alert.cycle < 370 for alert in monitor.alerts)
    assert all(alert.ebar > alert.ucl for alert in monitor.alerts)


def test_streaming_replay_matches_batch(trained, small_suite: SuiteConfig) -> None:
    model, table, _ = trained
    batch = Monitor(model, small_suite.run).run_table(table)
    streamed = list(monitor_stream(Monitor(model, small_suite.run), table_to_stream(table)))
    assert [d.statistic for d in streamed] == [d.statistic for d in batch]
    assert [d.exceeded for d in streamed] == [d.exceeded for d in batch]


def test_alerts_reach_sink_and_deep_dive_files(tmp_path, trained, small_suite: SuiteConfig) -> None:
    model, table, aligned = trained
    with AlertSink(tmp_path / "alerts.ndjson") as sink:
        monitor = Monitor(model, small_suite.run, sink, deep_dive_dir=tmp_path / "deep")
        monitor.run_table(table)
        written = monitor.write_retention(aligned, table.cycles)
        sentinel = monitor.write_sentinel(aligned)

    records = [json.loads(line) for line in (tmp_path / "alerts.ndjson").read_text().splitlines()]
    assert len(records) == len(monitor.alerts) > 0
    assert {"cycle", "ts", "ebar", "ucl", "strategy", "workload", "episode_id"} <= set(records[0])
    assert len(written) == len(monitor.state.escalation.windows)
    assert all(path.exists() for path in written)
    assert records[0]["trace_handle"] == str(written[0])

    kept = read_trace(sentinel)
    assert 0 < len(kept) < len(aligned)
    assert all(e.kind is EventKind.COUNTER or e.name in small_suite.run.cycles.phase_functions for e in kept)


def test_sink_writes_one_line_per_alert() -> None:
    buffer = io.StringIO()
    sink = AlertSink(stream=buffer)
    sink.write(Alert(cycle=7, ebar=0.3, ucl=0.1, strategy="DynamicWindow", episode_id=1))
    sink.write(Alert(cycle=9, ebar=0.2, ucl=0.1, strategy="DynamicWindow", episode_id=2))
    lines = buffer.getvalue().splitlines()
    assert [json.loads(line)["cycle"] for line in lines] == [7, 9]
    assert sink.count == 2


def test_alert_must_exceed_limit() -> None:
    with pytest.raises(ValueError):
        Alert(cycle=0, ebar=0.1, ucl=0.1, strategy="FixedPoint", episode_id=1)


def test_stream_records_are_validated() -> None:
    assert parse_stream_record("   ") is None
    prefill = json.dumps({"cycle": 0, "latency": 0.01, "B": 1, "L_in": 5, "L_out": 0, "stage": "Prefill"})
    assert parse_stream_record(prefill) is None
    assert parse_stream_record(prefill, include_prefill=True)[2].W_kv == 5
    with pytest.raises(MissingWorkloadArgs):
        parse_stream_record(json.dumps({"cycle": 1, "latency": 0.01, "B": 1}))
    with pytest.raises(NonPositiveLatency):
        parse_stream_record(json.dumps({"cycle": 1, "latency": 0, "B": 1, "L_in": 1, "L_out": 1}))


def _steady_stream(n: int):
    for cycle in range(n):
        latency = 4e-3 if cycle % 5_000 in (1_000, 1_001, 1_002) else 2e-3
        yield json.dumps(
            {"cycle": cycle, "ts": cycle * 1_000, "latency": latency, "B": 8, "L_in": 100, "L_out": 1 + cycle % 500, "stage": "Decode"}
        )


@pytest.mark.slow
def test_streaming_monitor_memory_is_flat() -> None:
    X = np.column_stack([np.arange(50.0), np.arange(50.0) * 10])
    model = fit(X, np.full(50, 2e-3), feature_schema("physical"))
    config = RunConfig(
        control=ControlConfig(alert_log_size=16), escalation=EscalationPolicy(retained_windows=8)
    )
    monitor = Monitor(model, config)

    tracemalloc.start()
    try:
        for count, _ in enumerate(monitor_stream(monitor, _steady_stream(1_000_000)), 1):
            if count == 200_000:
                early = tracemalloc.get_traced_memory()[0]
        late = tracemalloc.get_traced_memory()[0]
    finally:
        tracemalloc.stop()

    assert count == 1_000_000
    assert monitor.state.alert_count == 200
    assert len(monitor.state.window) == config.control.window
    assert len(monitor.state.alert_log) == 16
    assert len(monitor.state.escalation.windows) == len(monitor.state.escalation.actions) == 8
    assert late - early < 256 * 1024
