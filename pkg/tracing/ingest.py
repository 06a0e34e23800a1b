"""Multi-file ingestion: validate, calibrate and merge onto one timeline."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from response.validation_report import ValidationReport
from services.errors import MalformedEvent
from services.log import Log
from tracing.calibration import Beacon, ClockCalibration, apply_calibration, calibrate, extract_beacons
from tracing.codec import decode_stream, read_trace, read_trace_text
from tracing.correlation import CorrelationIndex, link_correlations
from tracing.events import TraceEvent, sort_events
from tracing.topology import TopologyMap, resolve_topology
from tracing.validation import validate_trace


@dataclass
class IngestResult:
    events: list[TraceEvent]
    calibration: ClockCalibration
    correlations: CorrelationIndex
    topology: TopologyMap
    reports: dict[str, ValidationReport] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(report.ok for report in self.reports.values())


def validate_file(path: Path) -> tuple[ValidationReport, list[TraceEvent]]:
    """Validate one file and return the events that decoded cleanly."""
    events: list[TraceEvent] = []

    def tee() -> Iterable[TraceEvent | MalformedEvent]:
        for item in decode_stream(read_trace_text(path)):
            if isinstance(item, TraceEvent):
                events.append(item)
            yield item

    report = validate_trace(tee())
    return report, sort_events(events)


def align_events(
    events: Sequence[TraceEvent],
    reference_domain: str = "host",
    tolerance_ns: float = 1000.0,
    estimate_drift: bool = False,
    extra_beacons: Iterable[Beacon] = (),
) -> tuple[list[TraceEvent], ClockCalibration]:
    """
    Calibrate an in-memory trace with its inline beacons plus any sidecar beacons.

    Returns
    -------
    tuple[list[TraceEvent], ClockCalibration]
        Calibrated, re-sorted events and the fitted calibration.
    """
    beacons = extract_beacons(events) + list(extra_beacons)
    domains = {event.source.clock_domain for event in events}
    calibration = calibrate(
        beacons,
        reference_domain=reference_domain,
        tolerance_ns=tolerance_ns,
        estimate_drift=estimate_drift,
        domains=domains,
    )
    return sort_events(apply_calibration(events, calibration)), calibration


def merge_traces(traces: Sequence[Sequence[TraceEvent]]) -> list[TraceEvent]:
    """
    Merge calibrated traces into one, renumbering event ids.

    Ids are assigned in (start_ts, file index, original id) order, so the
    merge is deterministic. Correlation ids are kept as-is and must be
    unique across the merged files.
    """
    if len(traces) == 1:
        return sort_events(traces[0])
    keyed = [
        (event.start_ts, file_index, event.event_id, event)
        for file_index, trace in enumerate(traces)
        for event in trace
    ]
    keyed.sort(key=lambda item: item[:3])
    return [item[3].model_copy(update={"event_id": new_id}) for new_id, item in enumerate(keyed)]


def ingest(
    paths: Sequence[Path],
    reference_domain: str = "host",
    tolerance_ns: float = 1000.0,
    estimate_drift: bool = False,
    beacon_file: Path | None = None,
) -> IngestResult:
    """
    Load, validate, calibrate and merge trace files.

    Files are calibrated independently, one transform set per file, then
    merged in a single deterministic step. Validation errors are reported,
    not raised; callers decide whether to continue.
    """
    extra = extract_beacons(read_trace(beacon_file)) if beacon_file else []
    reports: dict[str, ValidationReport] = {}
    aligned: list[list[TraceEvent]] = []
    calibration = ClockCalibration(reference_domain=reference_domain)

    for path in paths:
        Log.info(f"Ingesting trace {path}")
        report, events = validate_file(Path(path))
        reports[str(path)] = report
        calibrated, file_calibration = align_events(
            events,
            reference_domain=reference_domain,
            tolerance_ns=tolerance_ns,
            estimate_drift=estimate_drift,
            extra_beacons=extra,
        )
        calibration.transforms.update(file_calibration.transforms)
        aligned.append(calibrated)

    merged = merge_traces(aligned) if aligned else []
    result = IngestResult(
        events=merged,
        calibration=calibration,
        correlations=link_correlations(merged),
        topology=resolve_topology(merged),
        reports=reports,
    )
    Log.info(f"Ingested {len(merged)} events from {len(paths)} files; topology has {len(result.topology)} ranks")
    return result
