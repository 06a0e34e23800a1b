import math
from collections import Counter
from typing import Iterable

from response.validation_report import ValidationIssue, ValidationReport
from services.errors import MalformedEvent
from services.log import Log
from tracing.events import DEVICE_CATEGORIES, Category, EventKind, TraceEvent, group_counter_samples


def validate_trace(items: Iterable[TraceEvent | MalformedEvent]) -> ValidationReport:
    """
    Validate a decoded event stream.

    Validation never aborts: undecodable records are reported as errors
    with their byte offset and the scan continues.

    Parameters
    ----------
    items : Iterable[TraceEvent | MalformedEvent]
        Output of ``tracing.codec.decode_stream`` or a plain event list.

    Returns
    -------
    ValidationReport
        Category counts, correlation and counter findings.
    """
    report = ValidationReport()
    categories: Counter[str] = Counter()
    events: list[TraceEvent] = []

    for item in items:
        if isinstance(item, MalformedEvent):
            report.errors.append(
                ValidationIssue(kind="malformed", message=item.message, byte_offset=item.byte_offset)
            )
            continue
        events.append(item)
        categories[item.category.value] += 1
        for key, value in item.args.items():
            if isinstance(value, float) and not math.isfinite(value):
                report.errors.append(
                    ValidationIssue(
                        kind="malformed_args",
                        message=f"arg '{key}' of event {item.event_id} is not finite",
                        event_id=item.event_id,
                    )
                )

    report.total_events = len(events)
    report.counts_by_category = dict(sorted(categories.items()))

    # Correlation ids: at most one host and one device event each
    host_ids: Counter[int] = Counter()
    device_ids: Counter[int] = Counter()
    for event in events:
        if event.correlation_id is None:
            continue
        if event.category is Category.RUNTIME_API:
            host_ids[event.correlation_id] += 1
        elif event.category in DEVICE_CATEGORIES:
            device_ids[event.correlation_id] += 1

    for correlation_id, count in sorted(host_ids.items()):
        if count > 1:
            report.errors.append(
                ValidationIssue(
                    kind="duplicate_correlation",
                    message=f"correlation id {correlation_id} appears on {count} host events",
                )
            )
    for correlation_id, count in sorted(device_ids.items()):
        if count > 1:
            report.errors.append(
                ValidationIssue(
                    kind="duplicate_correlation",
                    message=f"correlation id {correlation_id} appears on {count} device events",
                )
            )
        if correlation_id not in host_ids:
            report.unmatched_correlations.append(correlation_id)
            report.warnings.append(
                ValidationIssue(
                    kind="unmatched_correlation",
                    message=f"device correlation id {correlation_id} has no RuntimeApi partner",
                )
            )

    # Counter series must be strictly increasing in time
    ordered = sorted((e for e in events if e.kind is EventKind.COUNTER), key=TraceEvent.sort_key)
    for (metric, source), samples in sorted(
        group_counter_samples(ordered).items(), key=lambda kv: (kv[0][0], kv[0][1].sort_key())
    ):
        if any(t_next <= t_prev for (t_prev, _), (t_next, _) in zip(samples, samples[1:])):
            report.non_monotone_metrics.append(metric)
            report.errors.append(
                ValidationIssue(
                    kind="non_monotone_counter",
                    message=f"counter '{metric}' from {source.node}/{source.clock_domain} has non-increasing timestamps",
                    metric=metric,
                )
            )

    if report.errors:
        Log.warning(f"Trace validation found {len(report.errors)} errors in {report.total_events} events")
    else:
        Log.info(f"Trace validation passed: {report.total_events} events, {len(report.warnings)} warnings")
    return report
