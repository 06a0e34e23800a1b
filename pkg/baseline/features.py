from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from cycles.segmenter import Stage
from cycles.workload import WorkloadFeatures
from request.run_config import FeatureSet

_UNITS = {
    "B": "count",
    "W_kv": "token-slots",
    "L_in": "tokens",
    "L_out": "tokens",
    "L_real": "tokens",
    "is_prefill": "flag",
}


class FeatureSchema(BaseModel):
    """Ordered feature names and their units, fixed per trained model."""

    model_config = ConfigDict(frozen=True)

    names: tuple[str, ...]
    units: tuple[str, ...]

    @model_validator(mode="after")
    def _aligned(self) -> "FeatureSchema":
        if len(self.names) != len(self.units):
            raise ValueError("feature names and units must have equal length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        return self

    def __len__(self) -> int:
        return len(self.names)


def _schema(names: Sequence[str]) -> FeatureSchema:
    return FeatureSchema(names=tuple(names), units=tuple(_UNITS.get(name, "raw") for name in names))


def feature_schema(feature_set: FeatureSet | str, extra_names: Sequence[str] = ()) -> FeatureSchema:
    """
    Schema for one of the three feature sets.

    physical is [B, W_kv]; extended adds L_in, L_out and a prefill flag;
    full holds raw args only (B, L_in, L_out, prefill flag and every other
    numeric arg, ``post_*`` included) and exists for the ablation.
    """
    feature_set = FeatureSet(feature_set)
    if feature_set is FeatureSet.PHYSICAL:
        return _schema(["B", "W_kv"])
    if feature_set is FeatureSet.EXTENDED:
        return _schema(["B", "W_kv", "L_in", "L_out", "is_prefill"])
    return _schema(["B", "L_in", "L_out", "is_prefill", *sorted(extra_names)])


def extra_names_of(workloads: Sequence[WorkloadFeatures]) -> list[str]:
    """Raw extra arg names present on every workload."""
    if not workloads:
        return []
    common = set(workloads[0].extra)
    for workload in workloads[1:]:
        common &= set(workload.extra)
    return sorted(common)


def feature_value(workload: WorkloadFeatures, name: str) -> float:
    if name == "is_prefill":
        return 1.0 if workload.stage is Stage.PREFILL else 0.0
    if name in ("B", "W_kv", "L_in", "L_out", "L_real"):
        return float(getattr(workload, name))
    return float(workload.extra[name])


def build_matrix(workloads: Sequence[WorkloadFeatures], schema: FeatureSchema) -> np.ndarray:
    """Feature matrix of shape (n_samples, n_features) in schema order."""
    matrix = np.empty((len(workloads), len(schema)), dtype=float)
    for row, workload in enumerate(workloads):
        for col, name in enumerate(schema.names):
            matrix[row, col] = feature_value(workload, name)
    return matrix

