from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from services.errors import InsufficientCalibration, NonPositiveLatency

DEFAULT_EPSILON = 1e-9
MIN_CALIBRATION = 30


class ResidualSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    cycle: int
    actual: float
    predicted: float
    error: float
    ts: int = 0


def ppe(actual: float, predicted: float, epsilon: float = DEFAULT_EPSILON) -> float:
    """
    Positive prediction error: max(0, (Y - Y_hat) / (Y + epsilon)).

    Overprediction clamps to zero, so speedups never count as errors.

    Raises
    ------
    NonPositiveLatency
        If the actual latency is not strictly positive.
    """
    if not actual > 0:
        raise NonPositiveLatency(f"Latency must be positive, got {actual}", {"actual": actual})
    return max(0.0, (actual - predicted) / (actual + epsilon))


def ppe_array(actual: np.ndarray, predicted: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    actual = np.asarray(actual, dtype=float)
    if np.any(~(actual > 0)):
        raise NonPositiveLatency("Latencies must be positive", {"invalid": int(np.count_nonzero(~(actual > 0)))})
    return np.maximum(0.0, (actual - np.asarray(predicted, dtype=float)) / (actual + epsilon))


def residual_sample(
    cycle: int, actual: float, predicted: float, epsilon: float = DEFAULT_EPSILON, ts: int = 0
) -> ResidualSample:
    return ResidualSample(cycle=cycle, actual=actual, predicted=predicted, error=ppe(actual, predicted, epsilon), ts=ts)


def compute_ucl(
    residuals: Sequence[float], k: float = 3.0, theta_max: float = 0.4, min_ucl: float = 0.02
) -> float:
    """
    Dynamic upper control limit from calibration residuals.

    UCL = max(min(mu + k * sigma, theta_max), min_ucl), with the sample
    standard deviation (ddof=1).

    Raises
    ------
    InsufficientCalibration
        If fewer than 30 residuals are given.
    """
    values = np.asarray(residuals, dtype=float)
    if values.size < MIN_CALIBRATION:
        raise InsufficientCalibration(
            f"Need at least {MIN_CALIBRATION} calibration residuals, got {values.size}",
            {"needed": MIN_CALIBRATION, "got": int(values.size)},
        )
    return ucl_from_stats(float(values.mean()), float(values.std(ddof=1)), k, theta_max, min_ucl)


def ucl_from_stats(mu: float, sigma: float, k: float = 3.0, theta_max: float = 0.4, min_ucl: float = 0.02) -> float:
    return max(min(mu + k * sigma, theta_max), min_ucl)
