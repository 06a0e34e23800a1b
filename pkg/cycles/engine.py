"""End-to-end cycle extraction: anchor, segment, classify, extract workload."""

from dataclasses import dataclass, field
from typing import Sequence

from cycles.anchor import AnchorCandidate, discover_anchor
from cycles.segmenter import Cycle, Stage, events_by_cycle, segment
from cycles.stage import classify_stages
from cycles.workload import WorkloadFeatures, extract_workload
from request.run_config import CycleConfig
from services.errors import MissingWorkloadArgs
from services.log import Log
from tracing.events import TraceEvent, sort_events


@dataclass
class CycleTable:
    anchor: AnchorCandidate
    cycles: list[Cycle]
    # cycle index -> features; cycles without workload args are absent
    workloads: dict[int, WorkloadFeatures] = field(default_factory=dict)
    missing_workload: list[int] = field(default_factory=list)

    def modeled(self, include_prefill: bool = False) -> list[tuple[Cycle, WorkloadFeatures]]:
        """Cycles usable by the predictor, in order."""
        stages = {Stage.DECODE, Stage.PREFILL} if include_prefill else {Stage.DECODE}
        return [
            (cycle, self.workloads[cycle.index])
            for cycle in self.cycles
            if cycle.stage in stages and cycle.index in self.workloads and cycle.latency_ns > 0
        ]

    def stage_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for cycle in self.cycles:
            counts[cycle.stage.value] = counts.get(cycle.stage.value, 0) + 1
        return counts


def build_cycles(events: Sequence[TraceEvent], config: CycleConfig | None = None) -> CycleTable:
    config = config or CycleConfig()
    ordered = sort_events(events)
    anchor = discover_anchor(ordered, config)
    cycles = segment(ordered, anchor, config)
    grouped = events_by_cycle(ordered, cycles)
    if not anchor.frequency_mode:
        cycles = classify_stages(cycles, grouped, config)

    table = CycleTable(anchor=anchor, cycles=cycles)
    for cycle, members in zip(cycles, grouped):
        try:
            table.workloads[cycle.index] = extract_workload(cycle, members, config)
        except MissingWorkloadArgs:
            table.missing_workload.append(cycle.index)

    if table.missing_workload:
        Log.warning(f"{len(table.missing_workload)} cycles carry no workload args")
    Log.info(f"Segmented {len(cycles)} cycles with anchor '{anchor.name}': {table.stage_counts()}")
    return table
