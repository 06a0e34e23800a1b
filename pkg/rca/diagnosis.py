from typing import Sequence

from cycles.engine import CycleTable
from cycles.segmenter import events_by_cycle
from rca.ranking import attribute_straggler, suspicion_rank
from rca.stats import StatsCollector, window_stats
from request.run_config import EscalationPolicy, RcaConfig
from response.suspicion_report import SuspicionReport
from services.log import Log
from tracing.events import TraceEvent, build_counter_series
from tracing.topology import TopologyMap


def rca_windows(
    exceeded: Sequence[bool],
    alert_position: int,
    pre_roll: int,
    normal_cycles: int = 200,
    abnormal_cycles: int = 50,
) -> tuple[list[int], list[int]]:
    """
    Positions (in the monitored sequence) of the normal and abnormal windows.

    Abnormal: the exceeding run that opens at the alert, capped at
    ``abnormal_cycles``. Normal: the ``normal_cycles`` positions ending
    ``pre_roll`` positions before the alert.
    """
    abnormal = []
    position = alert_position
    while position < len(exceeded) and exceeded[position] and len(abnormal) < abnormal_cycles:
        abnormal.append(position)
        position += 1
    end = max(0, alert_position - pre_roll)
    normal = list(range(max(0, end - normal_cycles), end))
    return normal, abnormal


def diagnose(
    events: Sequence[TraceEvent],
    table: CycleTable,
    monitored: Sequence[int],
    exceeded: Sequence[bool],
    alert_cycle: int,
    rca: RcaConfig | None = None,
    policy: EscalationPolicy | None = None,
    topology: TopologyMap | None = None,
    episode_id: int | None = None,
) -> SuspicionReport:
    """
    Rank root-cause suspects for the episode opened at ``alert_cycle``.

    Parameters
    ----------
    events : Sequence[TraceEvent]
        Calibrated trace.
    table : CycleTable
        Segmented cycles of the same trace.
    monitored : Sequence[int]
        Cycle indices fed to the detector, in order.
    exceeded : Sequence[bool]
        Per monitored cycle: statistic above the limit while armed.
    alert_cycle : int
        Cycle index of the alert opening the episode.

    Raises
    ------
    InsufficientCycles
        If either window is too small.
    """
    rca = rca or RcaConfig()
    policy = policy or EscalationPolicy()
    position = list(monitored).index(alert_cycle)
    normal_pos, abnormal_pos = rca_windows(exceeded, position, policy.pre_roll, rca.normal_cycles, rca.abnormal_cycles)
    normal_cycles = [table.cycles[monitored[p]] for p in normal_pos]
    abnormal_cycles = [table.cycles[monitored[p]] for p in abnormal_pos]

    collector = StatsCollector(build_counter_series(events), rca.metric_map, rca.include_python_calls)
    normal = window_stats(collector, normal_cycles, events_by_cycle(events, normal_cycles))
    abnormal = window_stats(collector, abnormal_cycles, events_by_cycle(events, abnormal_cycles))

    entries = suspicion_rank(normal, abnormal, rca.min_normal, rca.min_abnormal)
    if topology is not None:
        entries = attribute_straggler(entries, topology, normal, abnormal)

    report = SuspicionReport(
        entries=entries,
        normal_cycles=[c.index for c in normal_cycles],
        abnormal_cycles=[c.index for c in abnormal_cycles],
        alert_cycle=alert_cycle,
        episode_id=episode_id,
    )
    if report.top is not None:
        Log.info(f"Top suspect for alert at cycle {alert_cycle}: {report.top.event_class} (score {report.top.score:.3f})")
    return report
