from pydantic import BaseModel, Field


class ConvergencePoint(BaseModel):
    # Training samples seen
    samples: int

    # Test MAPE (percent) of the model fitted on that prefix
    mape: float

    # Fraction of test samples within 10% relative error
    within_10pct: float


class ModelMetrics(BaseModel):
    """
    Accuracy of a baseline model on a test set.

    ``degenerate`` is set when the test targets have zero variance, in
    which case R² is 1.0 for an exact fit and 0.0 otherwise.
    """

    r2: float = Field(le=1.0)
    mape: float = Field(ge=0.0)
    within_10pct: float = Field(ge=0.0, le=1.0)
    n_test: int
    relative_errors: list[float] = Field(default_factory=list)
    convergence: list[ConvergencePoint] = Field(default_factory=list)
    degenerate: bool = False


class AblationRow(BaseModel):
    feature_set: str
    model: str
    r2: float
    mape: float
    top_features: list[str]


class AblationTable(BaseModel):
    rows: list[AblationRow] = Field(default_factory=list)

    def cell(self, feature_set: str, model: str) -> AblationRow:
        for row in self.rows:
            if row.feature_set == feature_set and row.model == model:
                return row
        raise KeyError((feature_set, model))
