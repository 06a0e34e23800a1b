from typing import Any

from pydantic import BaseModel, Field, model_validator


class Alert(BaseModel):
    """
    One anomaly alert, emitted on the first exceeding cycle of an episode.

    Serialized as one NDJSON record by the alert sink.
    """

    # Monitored cycle index
    cycle: int

    # Cycle start on the calibrated timeline (ns)
    ts: int = 0

    # Statistic that crossed: E_t for point strategies, window mean otherwise
    ebar: float

    # Limit in force: fixed threshold or dynamic UCL
    ucl: float

    strategy: str

    # B, L_in, L_out, W_kv and stage of the alerting cycle
    workload: dict[str, Any] = Field(default_factory=dict)

    episode_id: int

    # Deep-dive trace written for this episode, when any
    trace_handle: str | None = None

    @model_validator(mode="after")
    def _exceeds(self) -> "Alert":
        if not self.ebar > self.ucl:
            raise ValueError(f"alert statistic {self.ebar} does not exceed limit {self.ucl}")
        return self


class RetentionWindow(BaseModel):
    """Cycle range kept at full fidelity around one deep-dive episode."""

    start: int
    end: int
    alerts: list[int] = Field(default_factory=list)

    def contains(self, cycle: int) -> bool:
        return self.start <= cycle <= self.end
