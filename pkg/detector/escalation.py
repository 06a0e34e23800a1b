"""Sentinel / deep-dive mode switching and full-fidelity retention."""

from collections import deque
from enum import Enum
from typing import Iterable, Sequence

from cycles.segmenter import Cycle
from request.run_config import EscalationPolicy
from response.alert import Alert, RetentionWindow
from services.log import Log
from tracing.events import EventKind, TraceEvent


class Mode(str, Enum):
    SENTINEL = "Sentinel"
    DEEP_DIVE = "DeepDive"


class EscalationManager:
    """
    Two-state machine: Sentinel -> DeepDive on an alert, back to Sentinel
    once the cycle counter passes the retention window end.

    Alerts raised while in DeepDive extend the window without emitting a
    new escalation action. Only the last ``policy.retained_windows``
    windows and actions stay in memory.
    """

    def __init__(self, policy: EscalationPolicy | None = None) -> None:
        self.policy = policy or EscalationPolicy()
        self.mode = Mode.SENTINEL
        self.current: RetentionWindow | None = None
        self.windows: deque[RetentionWindow] = deque(maxlen=self.policy.retained_windows)
        # Cycles at which collection escalation was requested
        self.actions: deque[int] = deque(maxlen=self.policy.retained_windows)

    def advance(self, cycle: int) -> None:
        if self.mode is Mode.DEEP_DIVE and self.current is not None and cycle > self.current.end:
            Log.info(f"Deep dive closed at cycle {cycle}; retained [{self.current.start}, {self.current.end}]")
            self.mode = Mode.SENTINEL
            self.current = None

    def escalate(self, alert_cycle: int) -> bool:
        """
        Register an alert; returns True when a new escalation action was emitted.
        """
        self.advance(alert_cycle)
        end = alert_cycle + self.policy.post_roll
        if self.mode is Mode.DEEP_DIVE and self.current is not None:
            self.current.end = max(self.current.end, end)
            self.current.alerts.append(alert_cycle)
            return False

        self.mode = Mode.DEEP_DIVE
        self.current = RetentionWindow(start=max(0, alert_cycle - self.policy.pre_roll), end=end, alerts=[alert_cycle])
        self.windows.append(self.current)
        self.actions.append(alert_cycle)
        Log.info(f"Escalating to deep dive at cycle {alert_cycle}: retaining [{self.current.start}, {end}]")
        return True


def escalate(
    state: EscalationManager, alert: Alert, policy: EscalationPolicy | None = None
) -> EscalationManager:
    if policy is not None:
        state.policy = policy
    state.escalate(alert.cycle)
    return state


def sentinel_view(events: Iterable[TraceEvent], phase_functions: Sequence[str]) -> list[TraceEvent]:
    """Events sentinel mode keeps: phase spans (workload metadata) and counters."""
    phases = set(phase_functions)
    return [e for e in events if e.kind is EventKind.COUNTER or (e.kind is EventKind.SPAN and e.name in phases)]


def deep_dive_events(
    events: Iterable[TraceEvent], cycles: Sequence[Cycle], window: RetentionWindow
) -> list[TraceEvent]:
    """Every event starting inside the cycles of a retention window."""
    if not cycles:
        return []
    first = max(0, min(window.start, len(cycles) - 1))
    last = max(0, min(window.end, len(cycles) - 1))
    start_ts, end_ts = cycles[first].start_ts, cycles[last].end_ts
    return [e for e in events if start_ts <= e.start_ts < end_ts]
