from pydantic import BaseModel, Field


class Attribution(BaseModel):
    comm_hash: str
    rank: int
    node: str | None = None
    device: str | None = None
    # "unmapped" when the rank has no topology entry
    note: str | None = None

    def label(self) -> str:
        if self.node is None:
            return f"{self.comm_hash}:{self.rank} (unmapped)"
        return f"{self.node}/{self.device}"


class SuspicionEntry(BaseModel):
    """
    Ranked suspect event class.

    ``delta_beta`` is the fraction form used in the score;
    ``delta_beta_pct`` is the same value in percentage points.
    """

    event_class: str
    delta_beta: float
    delta_beta_pct: float
    z_beta: float
    z_log_mu: float
    score: float = Field(ge=0.0)
    metric: str | None = None
    delta_mu: float | None = None
    p_value: float = 1.0
    beta_normal: float = 0.0
    beta_abnormal: float = 0.0
    attribution: Attribution | None = None


class SuspicionReport(BaseModel):
    entries: list[SuspicionEntry] = Field(default_factory=list)
    normal_cycles: list[int] = Field(default_factory=list)
    abnormal_cycles: list[int] = Field(default_factory=list)
    alert_cycle: int | None = None
    episode_id: int | None = None

    @property
    def top(self) -> SuspicionEntry | None:
        return self.entries[0] if self.entries else None
