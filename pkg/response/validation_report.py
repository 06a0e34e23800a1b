from pydantic import BaseModel, Field


class ValidationIssue(BaseModel):
    """
    One finding of trace validation.

    Parameters
    ----------
    kind : str
        malformed, malformed_args, non_monotone_counter,
        duplicate_correlation or unmatched_correlation.
    message : str
        Human readable description.
    byte_offset : int | None, optional
        Offset of the offending record in the file, when known.
    event_id : int | None, optional
        Offending event, when decodable.
    metric : str | None, optional
        Counter metric for counter findings.
    """

    kind: str
    message: str
    byte_offset: int | None = None
    event_id: int | None = None
    metric: str | None = None


class ValidationReport(BaseModel):
    """
    Result of validating a trace.

    A report with zero errors is accepted by every downstream module;
    warnings are informative only.
    """

    # Number of decoded events.
    total_events: int = 0

    # Events per category name.
    counts_by_category: dict[str, int] = Field(
        default_factory=dict
    )

    # Correlation ids of device events with no host partner.
    unmatched_correlations: list[int] = Field(
        default_factory=list
    )

    # Counter metrics whose timestamps are not strictly increasing.
    non_monotone_metrics: list[str] = Field(
        default_factory=list
    )

    # Blocking findings.
    errors: list[ValidationIssue] = Field(
        default_factory=list
    )

    # Non-blocking findings.
    warnings: list[ValidationIssue] = Field(
        default_factory=list
    )

    @property
    def ok(self) -> bool:
        return not self.errors
