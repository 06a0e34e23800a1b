from enum import Enum
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from services.env import Env
from services.errors import ConfigError


class StrictModel(BaseModel):
    """Configuration base: unknown keys are rejected, assignments validated."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class FeatureSet(str, Enum):
    PHYSICAL = "physical"
    EXTENDED = "extended"
    FULL = "full"


class Strategy(str, Enum):
    FIXED_POINT = "FixedPoint"
    FIXED_WINDOW = "FixedWindow"
    DYNAMIC_POINT = "DynamicPoint"
    DYNAMIC_WINDOW = "DynamicWindow"

    @property
    def windowed(self) -> bool:
        return self in (Strategy.FIXED_WINDOW, Strategy.DYNAMIC_WINDOW)

    @property
    def dynamic(self) -> bool:
        return self in (Strategy.DYNAMIC_POINT, Strategy.DYNAMIC_WINDOW)


class CalibrationConfig(StrictModel):
    reference_domain: str = Field(default="host", description="Clock domain defining the unified timeline")
    tolerance_ns: float = Field(default=1000.0, gt=0, description="Max beacon residual in nanoseconds")
    estimate_drift: bool = Field(default=False, description="Fit clock drift as well as offset")


class CycleConfig(StrictModel):
    anchor: str | None = Field(default=None, description="Anchor function; discovered when unset")
    min_calls: int = Field(default=10, ge=2, description="Minimum calls for an anchor candidate")
    phase_functions: list[str] = Field(
        default_factory=lambda: ["run_batch", "process_batch_result", "get_next_batch_to_run"],
        description="Phase spans summed into per-cycle component durations",
    )
    excluded_phases: list[str] = Field(
        default_factory=lambda: ["get_next_batch_to_run"],
        description="Phases recorded but not part of the modeled latency",
    )
    prefill_keywords: list[str] = Field(default_factory=lambda: ["forward_prefill"], description="Sub-events marking prefill")
    decode_keywords: list[str] = Field(
        default_factory=lambda: ["process_batch_result_decode"], description="Sub-events marking decode"
    )
    mode_arg: str = Field(default="forward_mode", description="Arg carrying the forward mode")
    batch_arg: str = Field(default="batch_size", description="Arg carrying the batch size")
    input_len_arg: str = Field(default="input_len", description="Arg carrying the input length")
    output_len_arg: str = Field(default="output_len", description="Arg carrying the current output length")
    duration_multiple: float = Field(default=3.0, gt=0, description="Prefill if duration exceeds this x trailing decode median")
    gap_multiple: float = Field(default=2.0, gt=0, description="Prefill if idle gap exceeds this x trailing median gap")
    trailing_window: int = Field(default=32, ge=1, description="Trailing decode cycles for the temporal heuristic")
    frequency_bin_ns: int = Field(default=1_000_000, gt=0, description="Bin width of the kernel-stream fallback")

    @model_validator(mode="after")
    def _excluded_are_phases(self) -> "CycleConfig":
        unknown = set(self.excluded_phases) - set(self.phase_functions)
        if unknown:
            raise ValueError(f"excluded_phases not in phase_functions: {sorted(unknown)}")
        return self

    @property
    def modeled_phases(self) -> list[str]:
        return [name for name in self.phase_functions if name not in self.excluded_phases]


class GbdtParams(StrictModel):
    n_trees: int = Field(default=500, ge=1, description="Boosting rounds")
    max_depth: int = Field(default=4, ge=1, description="Maximum tree depth")
    learning_rate: float = Field(default=0.1, gt=0, le=1, description="Shrinkage per tree")
    min_samples_leaf: int = Field(default=5, ge=1, description="Minimum samples per leaf")
    holdout_fraction: float = Field(default=0.2, gt=0, lt=1, description="Calibration holdout fraction")
    log_target: bool = Field(default=False, description="Fit squared loss on log latency instead of seconds")
    prediction_floor: float = Field(default=1e-6, gt=0, description="Lower clamp on predictions (seconds)")
    seed: int = Field(default=0, description="Seed of the holdout split")


class ModelConfig(StrictModel):
    feature_set: FeatureSet = Field(default=FeatureSet.PHYSICAL, description="physical, extended or full")
    include_prefill: bool = Field(default=False, description="Train and monitor prefill cycles too")
    gbdt: GbdtParams = Field(default_factory=GbdtParams)
    convergence_step: int = Field(default=200, ge=20, description="Prefix growth step of the convergence curve")


class ControlConfig(StrictModel):
    strategy: Strategy = Field(default=Strategy.DYNAMIC_WINDOW, description="Detection strategy")
    window: int = Field(default=10, ge=1, description="Sliding window W in cycles")
    threshold: float = Field(default=0.15, ge=0, description="Fixed threshold on E_t or its window mean")
    k: float = Field(default=3.0, gt=0, description="Sigma coefficient of the dynamic UCL")
    theta_max: float = Field(default=0.4, gt=0, description="Maximum tolerance capping the dynamic UCL")
    min_ucl: float = Field(default=0.02, ge=0, description="Floor of the dynamic UCL")
    warmup: int = Field(default=100, ge=0, description="Cycles observed before the detector arms")
    epsilon: float = Field(default=1e-9, gt=0, description="PPE denominator guard (seconds)")
    alert_log_size: int = Field(default=1000, ge=1, description="Alerts retained in memory")


class EscalationPolicy(StrictModel):
    pre_roll: int = Field(default=5, ge=0, description="Cycles retained before an alert")
    post_roll: int = Field(default=20, ge=1, description="Cycles retained after the last alert")
    retained_windows: int = Field(default=64, ge=1, description="Retention windows kept in memory while monitoring")


class RcaConfig(StrictModel):
    metric_map: dict[str, str] = Field(
        default_factory=lambda: {
            "oncpu": "cpu_usage",
            "gemm_kernel": "gpu_usage",
            "memcpy_h2d": "pcie_bytes",
            "allreduce": "tx_bytes",
            "swap_io": "page_activity",
        },
        description="Event class -> counter metric",
    )
    include_python_calls: bool = Field(default=False, description="Score PythonCall spans as event classes")
    min_normal: int = Field(default=10, ge=2, description="Minimum normal cycles")
    min_abnormal: int = Field(default=3, ge=1, description="Minimum abnormal cycles")
    normal_cycles: int = Field(default=200, ge=2, description="Normal window length")
    abnormal_cycles: int = Field(default=50, ge=1, description="Abnormal window cap")


class RunConfig(StrictModel):
    """
    Complete configuration of one command invocation.

    Loaded from YAML; command-line flags take precedence over file values.
    """

    inputs: list[Path] = Field(default_factory=list, description="Trace input paths")
    output_dir: Path = Field(default=Path("runs"), description="Directory for artifacts")
    seed: int = Field(default=0, description="Global seed")
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    cycles: CycleConfig = Field(default_factory=CycleConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    control: ControlConfig = Field(default_factory=ControlConfig)
    escalation: EscalationPolicy = Field(default_factory=EscalationPolicy)
    rca: RcaConfig = Field(default_factory=RcaConfig)

    @field_validator("inputs")
    @classmethod
    def validate_inputs(cls, v: list[Path]) -> list[Path]:
        """
        Reject duplicate input paths.

        Parameters
        ----------
        v : list[Path]
            Input paths to validate.

        Returns
        -------
        list[Path]
            The validated paths.

        Raises
        ------
        ValueError
            If a path is listed twice.
        """
        if len(set(v)) != len(v):
            error_msg = "Input paths must be unique"
            raise ValueError(error_msg)
        return v


def _parse_scalar(raw: str) -> Any:
    """Interpret an override value with YAML scalar rules."""
    return yaml.safe_load(raw)


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """
    Apply ``dotted.key=value`` overrides to a raw config mapping.

    Raises
    ------
    ConfigError
        If an override is not of the form key=value.
    """
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"Override '{override}' must look like key=value", {"override": override})
        dotted, raw = override.split("=", 1)
        cursor = data
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            cursor = cursor.setdefault(part, {})
            if not isinstance(cursor, dict):
                raise ConfigError(f"Override '{dotted}' descends into a scalar", {"override": override})
        cursor[parts[-1]] = _parse_scalar(raw)
    return data


def merge_sources(path: Path | None, overrides: list[str] | None = None, env_name: str = "SET") -> dict[str, Any]:
    """Raw mapping from the YAML file, then the ``env_name`` environment overrides, then ``overrides``."""
    return apply_overrides(load_yaml(path), Env.overrides(env_name) + list(overrides or []))


def load_yaml(path: Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}", {"path": str(path)}) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must be a mapping", {"path": str(path)})
    return data


def load_run_config(path: Path | None = None, overrides: list[str] | None = None, **flags: Any) -> RunConfig:
    """
    Build a RunConfig from defaults, an optional YAML file, overrides and flags.

    Parameters
    ----------
    path : Path | None, optional
        YAML config file.
    overrides : list[str] | None, optional
        ``dotted.key=value`` strings, applied after the file.
    **flags : Any
        Top-level fields set by dedicated CLI flags; ``None`` values are
        ignored. Applied last.

    Overrides listed in the ``ITERSENTINEL_SET`` environment variable sit
    between the file and ``overrides``.

    Returns
    -------
    RunConfig
        The validated configuration.

    Raises
    ------
    ConfigError
        If the file is unreadable or the merged config is invalid.
    """
    data = merge_sources(path, overrides)
    for key, value in flags.items():
        if value is not None:
            data[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(
            f"Invalid configuration: {exc.error_count()} errors",
            {"errors": [{"loc": ".".join(map(str, e["loc"])), "msg": e["msg"]} for e in exc.errors()]},
        ) from exc


def describe_config(model: type[BaseModel] = RunConfig, prefix: str = "") -> list[tuple[str, str, str]]:
    """
    Enumerate every config key with its default and description.

    Returns
    -------
    list[tuple[str, str, str]]
        (dotted key, default as text, description), in declaration order.
    """
    rows: list[tuple[str, str, str]] = []
    defaults = model()
    for name, info in model.model_fields.items():
        key = f"{prefix}{name}"
        annotation = info.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            rows.extend(describe_config(annotation, f"{key}."))
            continue
        value = getattr(defaults, name)
        if isinstance(value, Enum):
            value = value.value
        rows.append((key, str(value), info.description or ""))
    return rows


def render_config_help() -> str:
    """Aligned text listing of ``describe_config`` for ``--help``."""
    rows = describe_config()
    width = max(len(key) for key, _, _ in rows)
    lines = ["configuration keys (set in YAML or with --set key=value):"]
    for key, default, description in rows:
        lines.append(f"  {key.ljust(width)}  default={default}  {description}")
    return "\n".join(lines)
