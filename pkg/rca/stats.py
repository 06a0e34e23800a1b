"""Per-cycle time proportion (beta) and utilization (mu) of event classes."""

from collections import defaultdict
from typing import Iterable, Mapping, Sequence

from pydantic import BaseModel, ConfigDict, Field

from cycles.segmenter import Cycle
from rca.interpolation import SeriesIndex
from services.log import Log
from tracing.events import Category, CounterSeries, EventKind, TraceEvent


class CycleOpStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    cycle: int
    event_class: str
    # Summed clipped span time over cycle duration
    beta: float = Field(ge=0.0)
    mu: float | None = None
    metric: str | None = None
    # "commHash:rank" -> beta of that rank's spans, collectives only
    rank_beta: dict[str, float] = Field(default_factory=dict)


def event_class_of(event: TraceEvent, include_python_calls: bool = False) -> str | None:
    if event.kind is not EventKind.SPAN:
        return None
    if event.category is Category.PYTHON_CALL and not include_python_calls:
        return None
    return event.name


class StatsCollector:
    """
    Computes CycleOpStats for many cycles against one set of counters.

    Missing metrics are reported once per class, then silently yield
    beta-only entries.
    """

    def __init__(
        self,
        counters: Mapping[str, list[CounterSeries]],
        metric_map: Mapping[str, str],
        include_python_calls: bool = False,
    ) -> None:
        self.metric_map = dict(metric_map)
        self.include_python_calls = include_python_calls
        # metric -> [(node, index)] in source order
        self.indexes: dict[str, list[tuple[str, SeriesIndex]]] = {
            metric: [(series.source.node, SeriesIndex.from_series(series)) for series in items]
            for metric, items in counters.items()
        }
        self._warned: set[str] = set()

    def _series_for(self, metric: str, node: str) -> SeriesIndex | None:
        """Series of the metric sampled on the event's node, else the first one."""
        candidates = self.indexes.get(metric)
        if not candidates:
            return None
        for candidate_node, index in candidates:
            if candidate_node == node:
                return index
        return candidates[0][1]

    def _warn_unknown(self, event_class: str, metric: str | None) -> None:
        if event_class in self._warned:
            return
        self._warned.add(event_class)
        Log.warning(f"UnknownMetric: class '{event_class}' has no usable counter ({metric}); reporting beta only")

    def cycle_stats(self, cycle: Cycle, events: Iterable[TraceEvent]) -> list[CycleOpStats]:
        duration = cycle.duration
        occupancy: dict[str, int] = defaultdict(int)
        weighted: dict[str, float] = defaultdict(float)
        weights: dict[str, int] = defaultdict(int)
        first_start: dict[str, int] = {}
        ranks: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
        metrics: dict[str, SeriesIndex | None] = {}

        for event in events:
            event_class = event_class_of(event, self.include_python_calls)
            if event_class is None:
                continue
            start = max(event.start_ts, cycle.start_ts)
            end = min(event.end_ts, cycle.end_ts)
            span = max(0, end - start)
            occupancy[event_class] += span
            first_start.setdefault(event_class, start)

            if event.category is Category.COLLECTIVE_COMM and "commHash" in event.args and "rank" in event.args:
                ranks[event_class][f"{event.args['commHash']}:{event.args['rank']}"] += span

            if event_class not in metrics:
                metric = self.metric_map.get(event_class)
                metrics[event_class] = (
                    self._series_for(metric, event.source.node) if metric is not None else None
                )
                if metrics[event_class] is None:
                    self._warn_unknown(event_class, metric)
            index = metrics[event_class]
            if index is not None and span > 0:
                weighted[event_class] += index.mean(start, end) * span
                weights[event_class] += span

        stats = []
        for event_class in sorted(occupancy):
            index = metrics.get(event_class)
            mu = None
            if index is not None:
                mu = weighted[event_class] / weights[event_class] if weights[event_class] else index.at(first_start[event_class])
            stats.append(
                CycleOpStats(
                    cycle=cycle.index,
                    event_class=event_class,
                    beta=occupancy[event_class] / duration,
                    mu=mu,
                    metric=self.metric_map.get(event_class) if index is not None else None,
                    rank_beta={key: value / duration for key, value in sorted(ranks[event_class].items())},
                )
            )
        return stats


def cycle_stats(
    cycle: Cycle,
    events: Iterable[TraceEvent],
    counters: Mapping[str, list[CounterSeries]],
    metric_map: Mapping[str, str],
    include_python_calls: bool = False,
) -> list[CycleOpStats]:
    """
    Beta and mu per event class for one cycle.

    Classes absent from the cycle are omitted. A class whose metric is not
    mapped or not sampled gets mu = None.
    """
    return StatsCollector(counters, metric_map, include_python_calls).cycle_stats(cycle, events)


def window_stats(
    collector: StatsCollector, cycles: Sequence[Cycle], grouped: Sequence[Sequence[TraceEvent]]
) -> list[list[CycleOpStats]]:
    return [collector.cycle_stats(cycle, events) for cycle, events in zip(cycles, grouped)]
