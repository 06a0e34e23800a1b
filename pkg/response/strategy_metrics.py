from pydantic import BaseModel, Field


class StrategyMetrics(BaseModel):
    """
    Per-cycle detection quality of one strategy across labeled trials.

    Lag is in monitored cycles, averaged over detected trials only.
    """

    strategy: str
    precision: float
    recall: float
    f1: float
    fpr: float
    mean_lag: float | None = None
    detected: int = 0
    missed: int = 0
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    true_negatives: int = 0


class StrategyTable(BaseModel):
    rows: list[StrategyMetrics] = Field(default_factory=list)

    def get(self, strategy: str) -> StrategyMetrics:
        for row in self.rows:
            if row.strategy == strategy:
                return row
        raise KeyError(strategy)
