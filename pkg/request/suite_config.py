from enum import Enum
from pathlib import Path

from pydantic import Field, ValidationError, model_validator

from request.run_config import RunConfig, StrictModel, merge_sources
from services.errors import ConfigError


class ProfileKind(str, Enum):
    LOG_UNIFORM = "log_uniform"
    FIXED = "fixed"


class FaultFamily(str, Enum):
    CPU_CONTENTION = "CpuContention"
    CPU_FREQ_DROP = "CpuFreqDrop"
    GPU_CONTENTION = "GpuContention"
    GPU_CLOCK_LOCK = "GpuClockLock"
    MEMORY_THRASH = "MemoryThrash"
    NVLINK_SATURATION = "NvlinkSaturation"
    PCIE_BOTTLENECK = "PcieBottleneck"
    BUS_CONTENTION = "BusContention"


class WorkloadProfile(StrictModel):
    """Distribution of scheduler cohorts (batch compositions)."""

    kind: ProfileKind = ProfileKind.LOG_UNIFORM
    batch_range: tuple[int, int] = (1, 512)
    input_range: tuple[int, int] = (1, 2048)
    output_range: tuple[int, int] = (1, 512)
    # Decode steps a cohort runs before the next admission
    lifetime_range: tuple[int, int] = (1, 8)
    # Used by the fixed profile
    batch_size: int = Field(default=4, ge=1)
    input_len: int = Field(default=100, ge=0)

    @model_validator(mode="after")
    def _ranges(self) -> "WorkloadProfile":
        for name in ("batch_range", "input_range", "output_range", "lifetime_range"):
            low, high = getattr(self, name)
            if low < 1 or high < low:
                raise ValueError(f"{name} must satisfy 1 <= low <= high, got ({low}, {high})")
        return self


class GroundTruthModel(StrictModel):
    """
    Analytic cycle latency.

    T_gpu = a * W_kv + b * B + c; T_cpu = d * B + e. With ``overlap`` the
    cycle takes max(T_gpu, T_cpu), otherwise their sum. Noise is
    multiplicative log-normal with the given sigma.
    """

    a: float = Field(default=2e-8, ge=0, description="Seconds per token-slot")
    b: float = Field(default=1e-5, ge=0, description="Seconds per batch element")
    c: float = Field(default=1e-3, ge=0, description="Fixed seconds")
    d: float = Field(default=1e-4, ge=0, description="CPU seconds per batch element")
    e: float = Field(default=0.0, ge=0, description="Fixed CPU seconds")
    overlap: bool = True
    noise: float = Field(default=0.05, ge=0)


class FaultSpec(StrictModel):
    family: FaultFamily
    onset: int = Field(default=2500, ge=0)
    duration: int = Field(default=300, ge=1)
    severity: float = Field(default=6.0, gt=0)
    # Rank slowed by NvlinkSaturation
    slow_rank: int = Field(default=2, ge=0)

    @property
    def end(self) -> int:
        return self.onset + self.duration


class TrialSpec(StrictModel):
    trial_id: int = Field(ge=0)
    seed: int
    faults: list[FaultSpec] = Field(default_factory=list)


class SuiteConfig(StrictModel):
    """
    Declarative benchmark suite: workload, ground truth, faults, trial count.

    When ``trials`` is empty, ``n_trials`` trials are generated, cycling
    through ``families`` with one fault each at the shared onset,
    duration and severity.
    """

    n_trials: int = Field(default=20, ge=1)
    cycles: int = Field(default=4000, ge=10)
    train_cycles: int = Field(default=1500, ge=20, description="Clean prefix used to train the baseline")
    seed: int = 0
    ranks: int = Field(default=4, ge=1)
    nodes: int = Field(default=2, ge=1)
    profile: WorkloadProfile = Field(default_factory=WorkloadProfile)
    ground_truth: GroundTruthModel = Field(default_factory=GroundTruthModel)
    families: list[FaultFamily] = Field(default_factory=lambda: list(FaultFamily))
    onset: int = Field(default=2500, ge=0)
    duration: int = Field(default=300, ge=1)
    severity: float = Field(default=6.0, gt=0)
    trials: list[TrialSpec] = Field(default_factory=list)
    run: RunConfig = Field(default_factory=RunConfig)

    @model_validator(mode="after")
    def _fault_windows(self) -> "SuiteConfig":
        for trial in self.resolved_trials():
            for fault in trial.faults:
                if fault.onset < self.train_cycles:
                    raise ValueError(
                        f"trial {trial.trial_id}: fault onset {fault.onset} is inside the training prefix"
                    )
                if fault.onset < self.run.control.warmup:
                    raise ValueError(f"trial {trial.trial_id}: fault onset {fault.onset} precedes warmup")
        return self

    def resolved_trials(self) -> list[TrialSpec]:
        if self.trials:
            return list(self.trials)
        if not self.families:
            return [TrialSpec(trial_id=i, seed=self.seed + i) for i in range(self.n_trials)]
        return [
            TrialSpec(
                trial_id=i,
                seed=self.seed + i,
                faults=[
                    FaultSpec(
                        family=self.families[i % len(self.families)],
                        onset=self.onset,
                        duration=self.duration,
                        severity=self.severity,
                        slow_rank=min(2, self.ranks - 1),
                    )
                ],
            )
            for i in range(self.n_trials)
        ]


def load_suite_config(path: Path | None = None, overrides: list[str] | None = None) -> SuiteConfig:
    """
    Load a suite from YAML; ``ITERSENTINEL_SUITE_SET`` overrides, then
    ``--set`` overrides, are applied after the file.

    Raises
    ------
    ConfigError
        If the file is unreadable or invalid.
    """
    data = merge_sources(path, overrides, "SUITE_SET")
    try:
        return SuiteConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(
            f"Invalid suite configuration: {exc.error_count()} errors",
            {"errors": [{"loc": ".".join(map(str, e["loc"])), "msg": e["msg"]} for e in exc.errors()]},
        ) from exc
