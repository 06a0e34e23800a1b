from pydantic import BaseModel, Field

from response.model_metrics import AblationTable
from response.strategy_metrics import StrategyTable
from response.suspicion_report import SuspicionReport


class TrialOutcome(BaseModel):
    trial_id: int
    seed: int
    # Injected fault family, None for clean trials
    family: str | None = None
    onset: int | None = None
    n_monitored: int = 0
    ucl: float | None = None
    alerts: int = 0
    first_alert_cycle: int | None = None
    rca_top: str | None = None
    rca_p_value: float | None = None
    rca_hit: bool | None = None
    straggler: str | None = None
    straggler_rank: int | None = None
    straggler_hit: bool | None = None


class FamilyRca(BaseModel):
    """Top-1 localization quality for one fault family."""

    family: str
    trials: int
    top1_hits: int
    # Hits whose Welch p-value on beta is below 0.01
    significant_hits: int
    hit_rate: float = Field(ge=0.0, le=1.0)


class HeatmapRow(BaseModel):
    trial_id: int
    # Cycle index -> smoothed error under the dynamic-window chart
    values: dict[int, float] = Field(default_factory=dict)


class BenchmarkResult(BaseModel):
    config_hash: str | None = None
    strategies: StrategyTable = Field(default_factory=StrategyTable)
    rca: list[FamilyRca] = Field(default_factory=list)
    straggler_hit_rate: float | None = None
    ablation: AblationTable | None = None
    trials: list[TrialOutcome] = Field(default_factory=list)
    heatmap: list[HeatmapRow] = Field(default_factory=list)
    # Trial id -> ranked suspects of its fault episode
    reports: dict[int, SuspicionReport] = Field(default_factory=dict)

    def family(self, name: str) -> FamilyRca:
        for row in self.rca:
            if row.family == name:
                return row
        raise KeyError(name)
