from __future__ import annotations

import numpy as np
import pytest

from cycles.segmenter import Cycle
from rca.diagnosis import rca_windows
from rca.interpolation import SeriesIndex, interpolate_mean
from rca.ranking import attribute_straggler, suspicion_rank
from rca.stats import CycleOpStats, cycle_stats
from request.suite_config import SuiteConfig
from services.errors import EmptySeries, InsufficientCycles
from simkit.benchmark import generate_trial, run_trial
from tests.factories import counter, span
from tracing.events import Category, build_counter_series
from tracing.topology import DeviceRef, TopologyMap

MS = 1_000_000


def _standardized(n: int) -> np.ndarray:
    z = np.array([-1.0, 1.0] * (n // 2))
    return z / z.std(ddof=1)


def _window(betas: np.ndarray, mus: np.ndarray, event_class: str = "oncpu") -> list[list[CycleOpStats]]:
    return [
        [CycleOpStats(cycle=i, event_class=event_class, beta=float(b), mu=float(m), metric="cpu_usage")]
        for i, (b, m) in enumerate(zip(betas, mus))
    ]


def _collective_window(slow_share: float, n: int, ranks: int = 4) -> list[list[CycleOpStats]]:
    shares = {f"tp0:{r}": (slow_share if r == 2 else 0.05) for r in range(ranks)}
    return [
        [CycleOpStats(cycle=i, event_class="allreduce", beta=sum(shares.values()), mu=10.0, rank_beta=shares)]
        for i in range(n)
    ]


def test_linear_segment_mean_is_midpoint() -> None:
    assert SeriesIndex([0, 10], [10.0, 30.0]).mean(2.5, 7.5) == pytest.approx(20.0)


def test_constant_series_mean() -> None:
    assert SeriesIndex([0, 100], [5.0, 5.0]).mean(13, 77) == pytest.approx(5.0)


def test_mean_past_last_sample_clamps() -> None:
    assert SeriesIndex([0, 5], [3.0, 7.0]).mean(10, 20) == 7.0


def test_empty_series_raises() -> None:
    with pytest.raises(EmptySeries):
        SeriesIndex([], [], "cpu_usage")


def test_interval_mean_matches_riemann_sum() -> None:
    rng = np.random.default_rng(5)
    for _ in range(100):
        ts = np.sort(rng.choice(np.arange(0, 1_000, 10), 20, replace=False)).astype(float)
        values = rng.uniform(1.0, 100.0, 20)
        t0, t1 = sorted(rng.uniform(-50.0, 1_050.0, 2))
        steps = 100_000
        midpoints = t0 + (np.arange(steps) + 0.5) * (t1 - t0) / steps
        expected = float(np.interp(midpoints, ts, values).mean())
        assert SeriesIndex(ts, values).mean(t0, t1) == pytest.approx(expected, rel=1e-6)


def test_interpolate_mean_accepts_counter_series() -> None:
    series = build_counter_series([counter(0, "cpu_usage", 0, 10.0), counter(1, "cpu_usage", 10, 30.0)])
    assert interpolate_mean(series["cpu_usage"][0], 2.5, 7.5) == pytest.approx(20.0)


def test_beta_is_share_of_cycle_time() -> None:
    cycle = Cycle(index=0, start_ts=0, end_ts=10 * MS)
    events = [
        span(0, "oncpu", 0, 2 * MS, category=Category.OS_SCHED),
        span(1, "oncpu", 5 * MS, 900_000, category=Category.OS_SCHED),
    ]
    [stats] = cycle_stats(cycle, events, {}, {"oncpu": "cpu_usage"})
    assert stats.beta == pytest.approx(0.29)
    assert stats.mu is None


def test_mu_is_duration_weighted() -> None:
    cycle = Cycle(index=0, start_ts=0, end_ts=10 * MS)
    samples = [counter(i, "cpu_usage", ts, v) for i, (ts, v) in enumerate([(0, 10.0), (MS, 10.0), (2 * MS, 30.0), (5 * MS, 30.0)])]
    events = [
        span(10, "oncpu", 0, MS, category=Category.OS_SCHED),
        span(11, "oncpu", 2 * MS, 3 * MS, category=Category.OS_SCHED),
    ]
    [stats] = cycle_stats(cycle, events, build_counter_series(samples), {"oncpu": "cpu_usage"})
    assert stats.mu == pytest.approx(25.0)
    assert stats.metric == "cpu_usage"


def test_absent_class_and_python_calls_are_omitted() -> None:
    cycle = Cycle(index=0, start_ts=0, end_ts=10 * MS)
    events = [span(0, "run_batch", 0, MS), span(1, "gemm_kernel", 0, MS, category=Category.GPU_KERNEL)]
    assert [s.event_class for s in cycle_stats(cycle, events, {}, {})] == ["gemm_kernel"]


def test_beta_survives_uniform_time_rescaling() -> None:
    events = [span(0, "oncpu", 1_000, 3_000, category=Category.OS_SCHED)]
    scaled = [span(0, "oncpu", 2_000, 6_000, category=Category.OS_SCHED)]
    [base] = cycle_stats(Cycle(index=0, start_ts=0, end_ts=10_000), events, {}, {})
    [twice] = cycle_stats(Cycle(index=0, start_ts=0, end_ts=20_000), scaled, {}, {})
    assert base.beta == twice.beta


def test_score_combines_beta_shift_and_mu_shift() -> None:
    z = _standardized(20)
    normal = _window(0.10 + 0.02 * z, np.expm1(4.0 + 0.2 * z))
    abnormal = _window(np.full(5, 0.20), np.full(5, np.expm1(4.0 + 0.6)))
    [entry] = suspicion_rank(normal, abnormal)
    assert entry.delta_beta == pytest.approx(0.10)
    assert entry.delta_beta_pct == pytest.approx(10.0)
    assert entry.z_beta == pytest.approx(5.0)
    assert entry.z_log_mu == pytest.approx(3.0)
    assert entry.score == pytest.approx(0.8)
    assert entry.metric == "cpu_usage"


def test_identical_windows_score_zero() -> None:
    z = _standardized(20)
    window = _window(0.10 + 0.02 * z, np.full(20, 40.0))
    entries = suspicion_rank(window, window[:10])
    assert all(entry.score == pytest.approx(0.0, abs=1e-12) for entry in entries)


def test_entries_sort_by_score_then_name() -> None:
    z = _standardized(20)

    def stats(i: int, beta: float) -> list[CycleOpStats]:
        return [
            CycleOpStats(cycle=i, event_class="oncpu", beta=beta, mu=5.0),
            CycleOpStats(cycle=i, event_class="b", beta=0.1, mu=5.0),
            CycleOpStats(cycle=i, event_class="a", beta=0.1, mu=5.0),
        ]

    normal = [stats(i, float(0.1 + 0.02 * z[i])) for i in range(20)]
    abnormal = [stats(i, 0.3) for i in range(4)]
    assert [entry.event_class for entry in suspicion_rank(normal, abnormal)] == ["oncpu", "a", "b"]


def test_short_windows_raise() -> None:
    window = _window(np.full(5, 0.1), np.full(5, 1.0))
    with pytest.raises(InsufficientCycles):
        suspicion_rank(window, window)
    with pytest.raises(InsufficientCycles):
        suspicion_rank(_window(np.full(20, 0.1), np.full(20, 1.0)), window[:2])


def _topology(ranks: int = 4) -> TopologyMap:
    topology = TopologyMap()
    for rank in range(ranks):
        topology.insert("tp0", rank, DeviceRef(node=f"node-{rank // 2:02d}", device=f"gpu{rank % 2}"))
    return topology


def test_straggler_is_rank_with_largest_shift() -> None:
    normal, abnormal = _collective_window(0.05, 20), _collective_window(0.25, 5)
    entries = attribute_straggler(suspicion_rank(normal, abnormal), _topology(), normal, abnormal)
    attribution = entries[0].attribution
    assert (attribution.rank, attribution.node, attribution.device) == (2, "node-01", "gpu0")
    assert attribution.label() == "node-01/gpu0"


def test_single_rank_group_gets_no_attribution() -> None:
    normal, abnormal = _collective_window(0.05, 20, ranks=1), _collective_window(0.05, 5, ranks=1)
    entries = attribute_straggler(suspicion_rank(normal, abnormal), _topology(), normal, abnormal)
    assert entries[0].attribution is None


def test_unmapped_rank_is_annotated_not_dropped() -> None:
    normal, abnormal = _collective_window(0.05, 20), _collective_window(0.25, 5)
    entries = attribute_straggler(suspicion_rank(normal, abnormal), TopologyMap(), normal, abnormal)
    assert len(entries) == 1
    assert entries[0].attribution.note == "unmapped"
    assert entries[0].attribution.label() == "tp0:2 (unmapped)"


def test_windows_around_alert() -> None:
    exceeded = [False] * 300 + [True] * 80 + [False] * 20
    normal, abnormal = rca_windows(exceeded, 300, pre_roll=5, normal_cycles=200, abnormal_cycles=50)
    assert normal == list(range(95, 295))
    assert abnormal == list(range(300, 350))


@pytest.mark.slow
@pytest.mark.parametrize("trial_index, target", [(0, "oncpu"), (1, "allreduce")])
def test_injected_fault_class_ranks_first(small_suite: SuiteConfig, trial_index: int, target: str) -> None:
    trial = small_suite.resolved_trials()[trial_index]
    dataset = generate_trial(small_suite, trial)
    run = run_trial(trial, dataset.events, dataset.labels, small_suite)

    report = run.report
    assert report is not None
    assert report.top.event_class == target
    assert report.top.p_value < 0.01
    assert run.outcome.rca_hit
    if target == "allreduce":
        assert run.outcome.straggler == "node-01/gpu0"
        assert run.outcome.straggler_hit
