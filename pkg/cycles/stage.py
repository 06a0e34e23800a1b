from collections import deque
from typing import Sequence

import numpy as np

from cycles.segmenter import Cycle, Stage
from request.run_config import CycleConfig
from tracing.events import TraceEvent

_PREFILL_MODES = {"prefill", "extend"}
_DECODE_MODES = {"decode"}

# Decode cycles needed before the temporal heuristic is trusted
MIN_HISTORY = 3


class StageClassifier:
    """
    Stateful prefill/decode classifier for one trace.

    Decision order: forward-mode arg, then sub-event keywords, then the
    temporal heuristic against trailing decode statistics. Every Decode
    outcome feeds the trailing window, whichever rule produced it. Until
    the window holds MIN_HISTORY cycles the heuristic answers Unknown and
    those cycles feed the window as well, so a trace with neither args
    nor keywords still warms up.
    """

    def __init__(self, config: CycleConfig | None = None) -> None:
        self.config = config or CycleConfig()
        self._durations: deque[int] = deque(maxlen=self.config.trailing_window)
        self._gaps: deque[int] = deque(maxlen=self.config.trailing_window)

    def _from_args(self, events: Sequence[TraceEvent]) -> Stage | None:
        for event in events:
            mode = event.args.get(self.config.mode_arg)
            if mode is None:
                continue
            text = str(mode).lower()
            if text in _PREFILL_MODES:
                return Stage.PREFILL
            if text in _DECODE_MODES:
                return Stage.DECODE
        return None

    def _from_keywords(self, events: Sequence[TraceEvent]) -> Stage | None:
        names = {event.name for event in events}
        if names.intersection(self.config.prefill_keywords):
            return Stage.PREFILL
        if names.intersection(self.config.decode_keywords):
            return Stage.DECODE
        return None

    def _from_timing(self, cycle: Cycle) -> Stage:
        if len(self._durations) < MIN_HISTORY:
            return Stage.UNKNOWN
        long_cycle = cycle.duration > self.config.duration_multiple * np.median(self._durations)
        long_gap = cycle.idle_gap_ns > self.config.gap_multiple * np.median(self._gaps)
        return Stage.PREFILL if long_cycle and long_gap else Stage.DECODE

    def classify(self, cycle: Cycle, events: Sequence[TraceEvent]) -> Stage:
        stage = self._from_args(events) or self._from_keywords(events) or self._from_timing(cycle)
        if stage is not Stage.PREFILL:
            self._durations.append(cycle.duration)
            self._gaps.append(cycle.idle_gap_ns)
        return stage


def classify_stage(
    cycle: Cycle, events: Sequence[TraceEvent], classifier: StageClassifier | None = None
) -> Stage:
    """
    Classify one cycle.

    Without a classifier there is no trailing history, so cycles lacking
    an arg or keyword signal come back Unknown.
    """
    return (classifier or StageClassifier()).classify(cycle, events)


def classify_stages(
    cycles: Sequence[Cycle], grouped: Sequence[Sequence[TraceEvent]], config: CycleConfig | None = None
) -> list[Cycle]:
    """Classify cycles in order and return copies carrying their stage."""
    classifier = StageClassifier(config)
    return [
        cycle.model_copy(update={"stage": classifier.classify(cycle, events)})
        for cycle, events in zip(cycles, grouped)
    ]
