"""Online monitoring: predict, compute residuals, step the control chart."""

import json
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from baseline.features import build_matrix
from baseline.gbdt import GbdtModel, predict
from cycles.engine import CycleTable
from cycles.segmenter import Cycle, Stage
from cycles.workload import WorkloadFeatures
from detector.control import Decision, DetectorState
from detector.escalation import deep_dive_events, sentinel_view
from detector.residuals import ResidualSample, ppe
from detector.sink import AlertSink
from response.alert import Alert, RetentionWindow
from request.run_config import RunConfig
from services.errors import MissingWorkloadArgs, NonPositiveLatency
from tracing.codec import write_trace
from tracing.events import TraceEvent


def workload_snapshot(workload: WorkloadFeatures) -> dict[str, Any]:
    return {
        "B": workload.B,
        "L_in": workload.L_in,
        "L_out": workload.L_out,
        "W_kv": workload.W_kv,
        "stage": workload.stage.value,
    }


class Monitor:
    """
    Detector bound to one trained model and one output sink.

    ``run_table`` predicts a whole segmented trace in one pass;
    ``observe`` handles one streamed cycle at a time. Both go through the
    same chart, so offline and streaming replays agree.
    """

    def __init__(
        self,
        model: GbdtModel,
        config: RunConfig | None = None,
        sink: AlertSink | None = None,
        deep_dive_dir: Path | None = None,
    ) -> None:
        self.model = model
        self.config = config or RunConfig()
        self.sink = sink
        self.deep_dive_dir = Path(deep_dive_dir) if deep_dive_dir is not None else None
        self.state = DetectorState.from_calibration(
            model.calibration_residuals, self.config.control, self.config.escalation
        )

    def _step(self, cycle: int, ts: int, workload: WorkloadFeatures, actual: float, predicted: float) -> Decision:
        error = ppe(actual, predicted, self.config.control.epsilon)
        sample = ResidualSample(cycle=cycle, actual=actual, predicted=predicted, error=error, ts=ts)
        decision = self.state.step(sample, workload_snapshot(workload))
        alert = decision.alert
        if alert is not None and self.deep_dive_dir is not None:
            alert = alert.model_copy(update={"trace_handle": str(self.retention_path(self.state.escalation.current))})
        if alert is not None and self.sink is not None:
            self.sink.write(alert)
        return decision

    def retention_path(self, window: RetentionWindow) -> Path:
        """Deep-dive file of a retention window, named after its first alert."""
        return self.deep_dive_dir / f"deep_dive_cycle_{window.alerts[0]:06d}.json.gz"

    def observe(self, cycle: int, ts: int, workload: WorkloadFeatures, latency_s: float) -> Decision:
        features = build_matrix([workload], self.model.features)
        predicted = float(predict(self.model, features)[0])
        return self._step(cycle, ts, workload, latency_s, predicted)

    def run_table(self, table: CycleTable) -> list[Decision]:
        modeled = table.modeled(self.config.model.include_prefill)
        if not modeled:
            return []
        workloads = [workload for _, workload in modeled]
        predicted = predict(self.model, build_matrix(workloads, self.model.features))
        return [
            self._step(cycle.index, cycle.start_ts, workload, cycle.latency_s, float(p))
            for (cycle, workload), p in zip(modeled, predicted)
        ]

    def write_retention(self, events: Sequence[TraceEvent], cycles: Sequence[Cycle]) -> list[Path]:
        """Write the full-fidelity slice of every retention window seen so far."""
        if self.deep_dive_dir is None:
            return []
        written = []
        for window in self.state.escalation.windows:
            written.append(write_trace(self.retention_path(window), deep_dive_events(events, cycles, window)))
        return written

    def write_sentinel(self, events: Sequence[TraceEvent]) -> Path | None:
        """Write the sentinel-mode trace: phase spans and counter samples only."""
        if self.deep_dive_dir is None:
            return None
        kept = sentinel_view(events, self.config.cycles.phase_functions)
        return write_trace(self.deep_dive_dir / "sentinel.json.gz", kept)

    @property
    def alerts(self) -> list[Alert]:
        return list(self.state.alert_log)


def parse_stream_record(line: str, include_prefill: bool = False) -> tuple[int, int, WorkloadFeatures, float] | None:
    """
    Decode one streamed cycle record.

    Format: {"cycle", "ts", "latency", "B", "L_in", "L_out", "stage"} with
    latency in seconds. Returns None for blank lines and for prefill
    records that are not monitored (Unknown stage, or prefill unless
    included).

    Raises
    ------
    MissingWorkloadArgs
        If a workload field is absent.
    NonPositiveLatency
        If latency is not positive.
    """
    if not line.strip():
        return None
    record = json.loads(line)
    missing = [key for key in ("cycle", "latency", "B", "L_in", "L_out") if key not in record]
    if missing:
        raise MissingWorkloadArgs(f"Stream record lacks {missing}", {"record": record, "missing": missing})
    stage = Stage(record.get("stage", Stage.DECODE.value))
    if stage is Stage.UNKNOWN or (stage is Stage.PREFILL and not include_prefill):
        return None
    latency = float(record["latency"])
    if not latency > 0:
        raise NonPositiveLatency(f"Cycle {record['cycle']} has latency {latency}", {"cycle": record["cycle"]})
    workload = WorkloadFeatures(B=int(record["B"]), L_in=int(record["L_in"]), L_out=int(record["L_out"]), stage=stage)
    return int(record["cycle"]), int(record.get("ts", 0)), workload, latency


def monitor_stream(monitor: Monitor, lines: Iterable[str]) -> Iterator[Decision]:
    for line in lines:
        parsed = parse_stream_record(line, monitor.config.model.include_prefill)
        if parsed is not None:
            yield monitor.observe(*parsed)


def table_to_stream(table: CycleTable) -> Iterator[str]:
    """Render a segmented trace as streamed cycle records."""
    for cycle, workload in table.modeled(include_prefill=True):
        record = {"cycle": cycle.index, "ts": cycle.start_ts, "latency": cycle.latency_s}
        record.update(workload_snapshot(workload))
        record.pop("W_kv")
        yield json.dumps(record)
