from bisect import bisect_right
from enum import Enum
from typing import Sequence

from pydantic import BaseModel, ConfigDict, Field, model_validator

from cycles.anchor import AnchorCandidate
from request.run_config import CycleConfig
from tracing.events import Category, EventKind, TraceEvent, sort_events

NS_PER_S = 1e9


class Stage(str, Enum):
    PREFILL = "Prefill"
    DECODE = "Decode"
    UNKNOWN = "Unknown"


class Cycle(BaseModel):
    """
    One inference iteration on the calibrated timeline.

    Bounds are half-open, [start_ts, end_ts).
    """

    model_config = ConfigDict(frozen=True)

    # Ordinal within the trace
    index: int

    # Bounds in nanoseconds
    start_ts: int
    end_ts: int

    # Prefill, Decode or Unknown
    stage: Stage = Stage.UNKNOWN

    # Anchor occurrence that opens the cycle; None in frequency mode
    anchor_event_id: int | None = None

    # Phase name -> clipped span time within bounds (ns)
    components: dict[str, int] = Field(default_factory=dict)

    # Events starting inside the bounds
    event_ids: tuple[int, ...] = ()

    # Anchor start minus end of the latest PythonCall of the previous cycle
    idle_gap_ns: int = 0

    # Modeled latency Y_t (ns)
    latency_ns: int = 0

    @model_validator(mode="after")
    def _check_bounds(self) -> "Cycle":
        if self.end_ts <= self.start_ts:
            raise ValueError(f"cycle {self.index} has end_ts <= start_ts")
        duration = self.end_ts - self.start_ts
        for name, value in self.components.items():
            if value < 0 or value > duration:
                raise ValueError(f"cycle {self.index} component '{name}' outside [0, {duration}]")
        return self

    @property
    def duration(self) -> int:
        return self.end_ts - self.start_ts

    @property
    def latency_s(self) -> float:
        return self.latency_ns / NS_PER_S


def _anchor_starts(events: Sequence[TraceEvent], anchor: AnchorCandidate) -> list[tuple[int, int | None]]:
    if anchor.frequency_mode:
        last = max((e.start_ts for e in events if e.category is Category.GPU_KERNEL), default=anchor.origin_ts)
        count = (last - anchor.origin_ts) // anchor.period_ns
        return [(anchor.origin_ts + k * anchor.period_ns, None) for k in range(count + 1)]

    starts: list[tuple[int, int | None]] = []
    for event in events:
        if event.kind is EventKind.SPAN and event.name == anchor.name:
            # Nested or overlapping calls of the anchor collapse onto the outer one
            if starts and event.start_ts == starts[-1][0]:
                continue
            starts.append((event.start_ts, event.event_id))
    return starts


def segment(
    events: Sequence[TraceEvent], anchor: AnchorCandidate, config: CycleConfig | None = None
) -> list[Cycle]:
    """
    Split the event stream into cycles bounded by consecutive anchor starts.

    Parameters
    ----------
    events : Sequence[TraceEvent]
        Calibrated trace.
    anchor : AnchorCandidate
        Result of ``discover_anchor``.
    config : CycleConfig | None, optional
        Phase-function names and exclusions.

    Returns
    -------
    list[Cycle]
        Ordered, non-overlapping cycles with stage Unknown. Empty when the
        anchor occurs fewer than two times.
    """
    config = config or CycleConfig()
    ordered = sort_events(events)
    bounds = _anchor_starts(ordered, anchor)
    if len(bounds) < 2:
        return []

    edges = [ts for ts, _ in bounds]
    n_cycles = len(bounds) - 1
    members: list[list[int]] = [[] for _ in range(n_cycles)]
    components: list[dict[str, int]] = [{} for _ in range(n_cycles)]
    latest_python_end: list[int | None] = [None] * n_cycles
    phases = set(config.phase_functions)

    for event in ordered:
        slot = bisect_right(edges, event.start_ts) - 1
        if slot < 0 or slot >= n_cycles:
            continue
        members[slot].append(event.event_id)

        if event.category is Category.PYTHON_CALL and event.kind is EventKind.SPAN:
            previous = latest_python_end[slot]
            latest_python_end[slot] = event.end_ts if previous is None else max(previous, event.end_ts)

        if event.kind is EventKind.SPAN and event.name in phases:
            # A span crossing a boundary is clipped into every cycle it touches
            cursor = slot
            while cursor < n_cycles and edges[cursor] < event.end_ts:
                overlap = min(event.end_ts, edges[cursor + 1]) - max(event.start_ts, edges[cursor])
                if overlap > 0:
                    components[cursor][event.name] = components[cursor].get(event.name, 0) + overlap
                cursor += 1

    modeled = config.modeled_phases
    cycles = []
    for i in range(n_cycles):
        start, end = edges[i], edges[i + 1]
        duration = end - start
        clipped = {name: min(value, duration) for name, value in sorted(components[i].items())}
        gap = 0
        if i > 0 and latest_python_end[i - 1] is not None:
            gap = max(0, start - latest_python_end[i - 1])
        present = [clipped[name] for name in modeled if name in clipped]
        latency = sum(present) if present else duration
        cycles.append(
            Cycle(
                index=i,
                start_ts=start,
                end_ts=end,
                anchor_event_id=bounds[i][1],
                components=clipped,
                event_ids=tuple(members[i]),
                idle_gap_ns=gap,
                latency_ns=min(latency, duration),
            )
        )
    return cycles


def events_by_cycle(events: Sequence[TraceEvent], cycles: Sequence[Cycle]) -> list[list[TraceEvent]]:
    """Group events by the cycle that contains their start."""
    lookup = {event.event_id: event for event in events}
    return [[lookup[event_id] for event_id in cycle.event_ids] for cycle in cycles]
