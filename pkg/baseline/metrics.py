"""Accuracy metrics, convergence curves and train/test splits."""

from typing import Sequence

import numpy as np

from baseline.features import FeatureSchema
from baseline.gbdt import GbdtModel, fit, min_samples, predict
from cycles.workload import WorkloadFeatures
from request.run_config import GbdtParams
from response.model_metrics import ConvergencePoint, ModelMetrics
from services.errors import EmptyTestSet
from services.log import Log

WITHIN = 0.10


def relative_errors(actual: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    actual = np.asarray(actual, dtype=float)
    return np.abs(np.asarray(predicted, dtype=float) - actual) / np.abs(actual)


def r2_score(actual: np.ndarray, predicted: np.ndarray) -> tuple[float, bool]:
    """R² and whether the targets were degenerate (zero variance)."""
    actual = np.asarray(actual, dtype=float)
    ss_res = float(np.sum((actual - predicted) ** 2))
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0:
        # Log-space models reproduce a constant only up to rounding
        exact = bool(np.allclose(predicted, actual, rtol=1e-9, atol=0.0))
        return (1.0 if exact else 0.0), True
    return 1.0 - ss_res / ss_tot, False


def score_predictions(actual: np.ndarray, predicted: np.ndarray) -> ModelMetrics:
    """
    R², MAPE and within-10% fraction of predictions against actuals.

    Raises
    ------
    EmptyTestSet
        If there are no samples.
    """
    actual = np.asarray(actual, dtype=float)
    if actual.size == 0:
        raise EmptyTestSet("Cannot evaluate on an empty test set")
    errors = relative_errors(actual, predicted)
    r2, degenerate = r2_score(actual, np.asarray(predicted, dtype=float))
    return ModelMetrics(
        r2=min(r2, 1.0),
        mape=float(errors.mean() * 100.0),
        within_10pct=float(np.mean(errors < WITHIN)),
        n_test=int(actual.size),
        relative_errors=errors.tolist(),
        degenerate=degenerate,
    )


def convergence_curve(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    y_test: np.ndarray,
    schema: FeatureSchema,
    params: GbdtParams | None = None,
    step: int = 200,
) -> list[ConvergencePoint]:
    """Refit on growing training prefixes and score each on the test set."""
    params = params or GbdtParams()
    n = len(y_train)
    sizes = list(range(max(step, min_samples(params)), n + 1, step))
    if not sizes or sizes[-1] != n:
        sizes.append(n)

    curve = []
    for size in sizes:
        if size < min_samples(params):
            continue
        model = fit(X_train[:size], y_train[:size], schema, params)
        errors = relative_errors(y_test, predict(model, X_test))
        curve.append(
            ConvergencePoint(samples=size, mape=float(errors.mean() * 100.0), within_10pct=float(np.mean(errors < WITHIN)))
        )
        Log.debug(f"Convergence: {size} samples -> MAPE {curve[-1].mape:.2f}%")
    return curve


def evaluate(
    model: GbdtModel,
    X_test: np.ndarray,
    y_test: np.ndarray,
    training: tuple[np.ndarray, np.ndarray] | None = None,
    step: int = 200,
) -> ModelMetrics:
    """
    Score a model on held-out samples.

    Parameters
    ----------
    model : GbdtModel
        Trained model.
    X_test, y_test : np.ndarray
        Test features and latencies (seconds).
    training : tuple[np.ndarray, np.ndarray] | None, optional
        Training data; when given, a convergence curve is computed by
        refitting on growing prefixes with the model's hyperparameters.
    step : int, optional
        Prefix growth step.

    Raises
    ------
    EmptyTestSet
        If the test set is empty.
    """
    y_test = np.asarray(y_test, dtype=float)
    if y_test.size == 0:
        raise EmptyTestSet("Cannot evaluate on an empty test set")
    metrics = score_predictions(y_test, predict(model, X_test))
    if training is not None:
        metrics.convergence = convergence_curve(
            training[0], training[1], X_test, y_test, model.features, model.params, step
        )
    Log.info(f"Evaluated on {metrics.n_test} samples: R2={metrics.r2:.4f} MAPE={metrics.mape:.2f}%")
    return metrics


def chronological_split(n: int, test_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """First (1 - test_fraction) of the stream trains, the rest tests."""
    cut = int(round(n * (1.0 - test_fraction)))
    return np.arange(cut), np.arange(cut, n)


def shuffled_split(n: int, test_fraction: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random hold-out; both index arrays come back sorted."""
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(n * (1.0 - test_fraction)))
    return np.sort(order[:cut]), np.sort(order[cut:])


def unseen_workload_split(
    workloads: Sequence[WorkloadFeatures], test_fraction: float = 0.2, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """
    Split by batch-size group so test batch sizes never occur in training.

    Whole groups are moved to the test side, in seeded random order, until
    at least ``test_fraction`` of the samples are held out.
    """
    groups: dict[int, list[int]] = {}
    for index, workload in enumerate(workloads):
        groups.setdefault(workload.B, []).append(index)
    keys = sorted(groups)
    order = np.random.default_rng(seed).permutation(len(keys))

    target = test_fraction * len(workloads)
    test: list[int] = []
    for position in order:
        if len(test) >= target or len(test) + len(groups[keys[position]]) >= len(workloads):
            break
        test.extend(groups[keys[position]])
    test_idx = np.array(sorted(test), dtype=int)
    train_idx = np.setdiff1d(np.arange(len(workloads)), test_idx)
    return train_idx, test_idx
