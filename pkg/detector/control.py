"""Control-chart detector over prediction residuals."""

import math
from collections import deque
from dataclasses import dataclass
from typing import Any

from detector.escalation import EscalationManager, Mode
from detector.residuals import ResidualSample, compute_ucl
from request.run_config import ControlConfig, EscalationPolicy, Strategy
from response.alert import Alert
from services.log import Log


@dataclass(frozen=True)
class Decision:
    statistic: float
    limit: float
    armed: bool
    exceeded: bool
    alert: Alert | None = None


class DetectorState:
    """
    Mutable state of one monitored stream.

    The window always receives residuals, warmup included, so it is full
    when the detector arms. An episode opens on the first exceeding cycle
    and closes when the statistic falls back to or below the limit; only
    the opening cycle emits an alert.
    """

    def __init__(
        self,
        config: ControlConfig | None = None,
        ucl: float | None = None,
        policy: EscalationPolicy | None = None,
    ) -> None:
        self.config = config or ControlConfig()
        self.strategy = Strategy(self.config.strategy)
        if self.strategy.dynamic and ucl is None:
            raise ValueError(f"{self.strategy.value} needs a dynamic UCL")
        self.ucl = ucl
        self.window: deque[float] = deque(maxlen=self.config.window if self.strategy.windowed else 1)
        self.ebar = 0.0
        self.observed = 0
        self.in_episode = False
        self.episode_id = 0
        self.alert_log: deque[Alert] = deque(maxlen=self.config.alert_log_size)
        self.alert_count = 0
        self.escalation = EscalationManager(policy)

    @classmethod
    def from_calibration(
        cls, residuals: list[float], config: ControlConfig | None = None, policy: EscalationPolicy | None = None
    ) -> "DetectorState":
        config = config or ControlConfig()
        ucl = None
        if Strategy(config.strategy).dynamic:
            ucl = compute_ucl(residuals, config.k, config.theta_max, config.min_ucl)
            Log.info(f"Dynamic UCL {ucl:.4f} from {len(residuals)} calibration residuals")
        return cls(config, ucl, policy)

    @property
    def limit(self) -> float:
        return self.ucl if self.strategy.dynamic else self.config.threshold

    @property
    def mode(self) -> Mode:
        return self.escalation.mode

    @property
    def armed(self) -> bool:
        return self.observed >= self.config.warmup

    def step(self, sample: ResidualSample, workload: dict[str, Any] | None = None) -> Decision:
        armed = self.armed
        self.observed += 1
        self.escalation.advance(sample.cycle)

        self.window.append(sample.error)
        self.ebar = math.fsum(self.window) / len(self.window)
        limit = self.limit
        exceeded = armed and self.ebar > limit

        alert = None
        if exceeded and not self.in_episode:
            self.in_episode = True
            self.episode_id += 1
            alert = Alert(
                cycle=sample.cycle,
                ts=sample.ts,
                ebar=self.ebar,
                ucl=limit,
                strategy=self.strategy.value,
                workload=workload or {},
                episode_id=self.episode_id,
            )
            self.alert_log.append(alert)
            self.alert_count += 1
            self.escalation.escalate(sample.cycle)
            Log.warning(
                f"Alert at cycle {sample.cycle}: {self.strategy.value} statistic {self.ebar:.4f} > {limit:.4f}"
            )
        elif not exceeded:
            self.in_episode = False
        return Decision(statistic=self.ebar, limit=limit, armed=armed, exceeded=exceeded, alert=alert)


def step(state: DetectorState, sample: ResidualSample) -> tuple[DetectorState, Alert | None]:
    decision = state.step(sample)
    return state, decision.alert


def run_chart(errors: list[float], state: DetectorState, cycles: list[int] | None = None) -> list[Decision]:
    """Feed a residual stream through ``state``; cycle numbers default to positions."""
    cycles = cycles if cycles is not None else list(range(len(errors)))
    return [
        state.step(ResidualSample(cycle=cycle, actual=1.0, predicted=1.0 - error, error=error))
        for cycle, error in zip(cycles, errors)
    ]
