from pydantic import BaseModel, Field

LAYOUT_VERSION = 1


class TrialEntry(BaseModel):
    trial_id: int
    seed: int
    families: list[str] = Field(default_factory=list)
    n_cycles: int
    anomalous_cycles: int
    # Paths relative to the run directory
    trace: str
    labels: str
    faults: str
    trace_sha256: str


class RunManifest(BaseModel):
    """
    Index of a simulated run directory.

    Holds no wall-clock data, so identical configs give identical manifests.
    """

    layout_version: int = LAYOUT_VERSION
    config_hash: str
    seed: int
    trials: list[TrialEntry] = Field(default_factory=list)
