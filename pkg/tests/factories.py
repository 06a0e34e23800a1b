"""Small hand-built events for unit tests."""

from __future__ import annotations

from typing import Any

from tracing.events import Category, Collector, EventKind, SourceId, TraceEvent

HOST = SourceId(node="node-00", collector=Collector.APP_TRACER, clock_domain="host")
TELEMETRY = SourceId(node="node-00", collector=Collector.TELEMETRY, clock_domain="host")
DEVICE = SourceId(node="node-00", collector=Collector.DEVICE_TRACER, clock_domain="gpu")


def span(
    event_id: int,
    name: str,
    start: int,
    duration: int,
    category: Category = Category.PYTHON_CALL,
    source: SourceId = HOST,
    args: dict[str, Any] | None = None,
    correlation_id: int | None = None,
    track: tuple[int, int] = (1, 1),
) -> TraceEvent:
    return TraceEvent(
        event_id=event_id,
        kind=EventKind.SPAN,
        name=name,
        category=category,
        source=source,
        start_ts=start,
        duration=duration,
        track=track,
        correlation_id=correlation_id,
        args=args or {},
    )


def counter(event_id: int, metric: str, ts: int, value: float, source: SourceId = TELEMETRY) -> TraceEvent:
    return TraceEvent(
        event_id=event_id,
        kind=EventKind.COUNTER,
        name=metric,
        category=Category.COUNTER_TELEMETRY,
        source=source,
        start_ts=ts,
        args={"value": value},
    )


def beacon(event_id: int, local_ts: int, reference_us: float, source: SourceId = DEVICE) -> TraceEvent:
    return TraceEvent(
        event_id=event_id,
        kind=EventKind.INSTANT,
        name="beacon",
        category=Category.COUNTER_TELEMETRY,
        source=source,
        start_ts=local_ts,
        args={"reference_ts": reference_us},
    )


def decode_cycles(n: int, period: int = 1_000_000, batch: int = 4, start_id: int = 0) -> list[TraceEvent]:
    """
    ``n`` decode cycles of a scheduler anchor followed by a run_batch span.

    The anchor runs 100 us, run_batch the next 600 us and carries the
    workload args; a closing anchor bounds the last cycle.
    """
    events = []
    event_id = start_id
    for i in range(n + 1):
        t0 = i * period
        events.append(span(event_id, "get_next_batch_to_run", t0, 100_000))
        event_id += 1
        if i == n:
            break
        events.append(
            span(
                event_id,
                "run_batch",
                t0 + 100_000,
                600_000,
                args={"batch_size": batch, "input_len": 100, "output_len": i, "forward_mode": "decode"},
            )
        )
        event_id += 1
    return events
