"""Unified cross-stack event vocabulary."""

import math
from enum import Enum
from typing import Iterable

from pydantic import BaseModel, ConfigDict, Field, StrictBool, StrictFloat, StrictInt, StrictStr, model_validator

ArgValue = StrictBool | StrictInt | StrictFloat | StrictStr


class EventKind(str, Enum):
    SPAN = "Span"
    INSTANT = "Instant"
    COUNTER = "Counter"
    FLOW = "Flow"


class Category(str, Enum):
    PYTHON_CALL = "PythonCall"
    RUNTIME_API = "RuntimeApi"
    GPU_KERNEL = "GpuKernel"
    MEM_COPY = "MemCopy"
    OS_SCHED = "OsSched"
    NET_IO = "NetIo"
    COUNTER_TELEMETRY = "CounterTelemetry"
    COLLECTIVE_COMM = "CollectiveComm"


DEVICE_CATEGORIES = frozenset({Category.GPU_KERNEL, Category.MEM_COPY})


class Collector(str, Enum):
    APP_TRACER = "AppTracer"
    KERNEL_TRACER = "KernelTracer"
    DEVICE_TRACER = "DeviceTracer"
    TELEMETRY = "Telemetry"


class SourceId(BaseModel):
    """
    Origin of an event: host, collector and the clock it was stamped with.

    Parameters
    ----------
    node : str
        Hostname of the collecting machine.
    collector : Collector
        Tracer family that emitted the event.
    clock_domain : str
        Identifier of the clock; selects the calibration transform.
    """

    model_config = ConfigDict(frozen=True)

    node: str
    collector: Collector
    clock_domain: str

    def sort_key(self) -> tuple[str, str, str]:
        return (self.node, self.collector.value, self.clock_domain)


class TraceEvent(BaseModel):
    """
    One timestamped span, instant, counter sample or flow endpoint.

    Timestamps are signed integer nanoseconds relative to trace start.
    Instances are immutable and safe to share across consumers.
    """

    model_config = ConfigDict(frozen=True)

    event_id: StrictInt
    kind: EventKind
    name: str
    category: Category
    source: SourceId
    start_ts: StrictInt
    duration: StrictInt | None = None
    track: tuple[int, int] = (0, 0)
    correlation_id: StrictInt | None = None
    args: dict[str, ArgValue] = Field(default_factory=dict)
    calibrated: bool = False

    @model_validator(mode="after")
    def _check_kind_invariants(self) -> "TraceEvent":
        if self.kind is EventKind.SPAN:
            if self.duration is None or self.duration < 0:
                raise ValueError(f"span '{self.name}' needs a duration >= 0")
        elif self.duration is not None:
            raise ValueError(f"{self.kind.value} event '{self.name}' must not carry a duration")

        if self.kind is EventKind.COUNTER:
            value = self.args.get("value")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"counter '{self.name}' needs a numeric 'value' arg")
            numeric = [k for k, v in self.args.items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
            if numeric != ["value"]:
                raise ValueError(f"counter '{self.name}' must carry exactly one numeric arg")
            if not math.isfinite(value):
                raise ValueError(f"counter '{self.name}' value must be finite")
        return self

    @property
    def end_ts(self) -> int:
        return self.start_ts + (self.duration or 0)

    def sort_key(self) -> tuple[int, int]:
        return (self.start_ts, self.event_id)

    @property
    def value(self) -> float:
        """Numeric sample of a counter event."""
        return float(self.args["value"])


class CounterSeries(BaseModel):
    """
    Ordered samples of one counter metric from one source.

    Parameters
    ----------
    metric : str
        Metric name (cpu_usage, gpu_usage, frequency, tx_bytes, ...).
    source : SourceId
        Source that sampled the metric.
    samples : tuple[tuple[int, float], ...]
        (timestamp ns, value) pairs, strictly increasing in time.
    """

    model_config = ConfigDict(frozen=True)

    metric: str
    source: SourceId
    samples: tuple[tuple[int, float], ...]

    @model_validator(mode="after")
    def _check_samples(self) -> "CounterSeries":
        for (t_prev, _), (t_next, _) in zip(self.samples, self.samples[1:]):
            if t_next <= t_prev:
                raise ValueError(f"counter '{self.metric}' timestamps must be strictly increasing")
        if any(not math.isfinite(v) for _, v in self.samples):
            raise ValueError(f"counter '{self.metric}' values must be finite")
        return self

    @property
    def timestamps(self) -> list[int]:
        return [t for t, _ in self.samples]

    @property
    def values(self) -> list[float]:
        return [v for _, v in self.samples]


def sort_events(events: Iterable[TraceEvent]) -> list[TraceEvent]:
    """Order events by (start_ts, event_id)."""
    return sorted(events, key=TraceEvent.sort_key)


def group_counter_samples(events: Iterable[TraceEvent]) -> dict[tuple[str, SourceId], list[tuple[int, float]]]:
    """
    Collect raw counter samples keyed by (metric, source), in event order.

    No monotonicity check is applied; see ``build_counter_series``.
    """
    grouped: dict[tuple[str, SourceId], list[tuple[int, float]]] = {}
    for event in events:
        if event.kind is EventKind.COUNTER:
            grouped.setdefault((event.name, event.source), []).append((event.start_ts, event.value))
    return grouped


def build_counter_series(events: Iterable[TraceEvent]) -> dict[str, list[CounterSeries]]:
    """
    Build counter series per metric name.

    Parameters
    ----------
    events : Iterable[TraceEvent]
        Trace events; only Counter events are used.

    Returns
    -------
    dict[str, list[CounterSeries]]
        Series grouped by metric, one entry per source, ordered by source.
    """
    series: dict[str, list[CounterSeries]] = {}
    grouped = group_counter_samples(sort_events(events))
    for (metric, source), samples in sorted(grouped.items(), key=lambda kv: (kv[0][0], kv[0][1].sort_key())):
        series.setdefault(metric, []).append(
            CounterSeries(metric=metric, source=source, samples=tuple(samples))
        )
    return series
