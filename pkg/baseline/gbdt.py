"""Gradient-boosted regression trees for the workload -> latency baseline."""

from typing import Sequence

import numpy as np
from pydantic import BaseModel, Field

from baseline.features import FeatureSchema
from baseline.tree import RegressionTree, fit_tree
from detector.residuals import ppe_array
from request.run_config import GbdtParams
from services.errors import FeatureMismatch, InsufficientData, InvalidTargets
from services.log import Log

SCHEMA_VERSION = 1


class GbdtModel(BaseModel):
    """
    Trained boosting ensemble plus the residual statistics the detector needs.

    Predictions are ``base_prediction + learning_rate * sum(tree outputs)``
    in fitting space: seconds by default, log-seconds with ``log_target``.
    """

    schema_version: int = SCHEMA_VERSION
    features: FeatureSchema
    params: GbdtParams = Field(default_factory=GbdtParams)
    base_prediction: float = 0.0
    trees: list[RegressionTree] = Field(default_factory=list)

    # Total split gain per feature, in schema order
    importance: list[float] = Field(default_factory=list)

    # PPE statistics on the calibration holdout
    residual_mu: float = 0.0
    residual_sigma: float = 0.0
    calibration_residuals: list[float] = Field(default_factory=list)

    # Training MSE in fitting space after each tree
    train_loss: list[float] = Field(default_factory=list)

    # Zero-variance targets; the model is a constant predictor
    degenerate: bool = False
    n_train: int = 0

    @property
    def learning_rate(self) -> float:
        return self.params.learning_rate

    @property
    def total_gain(self) -> float:
        return float(sum(self.importance))

    def ranked_features(self) -> list[tuple[str, float]]:
        pairs = zip(self.features.names, self.importance)
        return sorted(pairs, key=lambda item: (-item[1], item[0]))

    def raw_predict(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], self.base_prediction, dtype=float)
        for tree in self.trees:
            out += self.params.learning_rate * tree.predict(X)
        return out


def min_samples(params: GbdtParams) -> int:
    return max(2 * params.min_samples_leaf, 20)


def calibration_split(
    X: np.ndarray, schema: FeatureSchema, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """
    Split row indices into (train, calibration), stratified by W_kv quintile.

    Falls back to the first feature when the schema has no W_kv column.
    Each stratum contributes round(fraction * size) rows, chosen with a
    seeded generator, so the split is reproducible.
    """
    column = schema.names.index("W_kv") if "W_kv" in schema.names else 0
    values = X[:, column]
    edges = np.quantile(values, [0.2, 0.4, 0.6, 0.8])
    strata = np.searchsorted(edges, values, side="right")
    rng = np.random.default_rng(seed)

    calibration: list[np.ndarray] = []
    for stratum in range(5):
        members = np.flatnonzero(strata == stratum)
        take = int(round(fraction * members.size))
        if take:
            calibration.append(rng.permutation(members)[:take])
    cal = np.sort(np.concatenate(calibration)) if calibration else np.array([], dtype=int)
    train = np.setdiff1d(np.arange(X.shape[0]), cal)
    return train, cal


def _check_targets(y: np.ndarray) -> None:
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        bad = int(np.count_nonzero(~np.isfinite(y) | (y <= 0)))
        raise InvalidTargets(f"{bad} latency targets are not positive and finite", {"invalid": bad})


def fit(
    X: np.ndarray,
    y: Sequence[float] | np.ndarray,
    schema: FeatureSchema,
    params: GbdtParams | None = None,
) -> GbdtModel:
    """
    Fit a least-squares boosting ensemble on (features, latency seconds).

    Parameters
    ----------
    X : np.ndarray
        Feature matrix in schema order.
    y : Sequence[float] | np.ndarray
        Latencies in seconds.
    schema : FeatureSchema
        Feature names and units; stored with the model.
    params : GbdtParams | None, optional
        Hyperparameters.

    Returns
    -------
    GbdtModel
        Ensemble fitted on the non-calibration rows, with PPE statistics
        from the calibration holdout.

    Raises
    ------
    InsufficientData
        If there are fewer than max(2 * min_samples_leaf, 20) samples.
    InvalidTargets
        If a target is not positive and finite.
    FeatureMismatch
        If X does not match the schema width.
    """
    params = params or GbdtParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(schema):
        raise FeatureMismatch(
            f"Feature matrix has {X.shape[-1]} columns, schema has {len(schema)}",
            {"expected": list(schema.names)},
        )
    needed = min_samples(params)
    if y.size < needed:
        raise InsufficientData(f"Need at least {needed} samples, got {y.size}", {"needed": needed, "got": int(y.size)})
    _check_targets(y)

    if np.ptp(y) == 0:
        Log.warning(f"Degenerate targets: all {y.size} latencies equal {y[0]:.6g} s")
        base = float(np.log(y[0])) if params.log_target else float(y[0])
        return GbdtModel(
            features=schema,
            params=params,
            base_prediction=base,
            importance=[0.0] * len(schema),
            degenerate=True,
            n_train=int(y.size),
            # A constant model reproduces every sample exactly
            calibration_residuals=[0.0] * int(y.size),
        )

    train, cal = calibration_split(X, schema, params.holdout_fraction, params.seed)
    X_train, y_train = X[train], y[train]
    target = np.log(y_train) if params.log_target else y_train

    base = float(target.mean())
    current = np.full(target.shape, base)
    trees: list[RegressionTree] = []
    importance = np.zeros(len(schema))
    train_loss: list[float] = []
    for _ in range(params.n_trees):
        tree = fit_tree(X_train, target - current, params.max_depth, params.min_samples_leaf)
        current += params.learning_rate * tree.predict(X_train)
        importance += tree.feature_gains(len(schema))
        trees.append(tree)
        train_loss.append(float(np.mean((target - current) ** 2)))

    model = GbdtModel(
        features=schema,
        params=params,
        base_prediction=base,
        trees=trees,
        importance=importance.tolist(),
        train_loss=train_loss,
        n_train=int(train.size),
    )

    if cal.size:
        residuals = ppe_array(y[cal], predict(model, X[cal]))
        model.calibration_residuals = residuals.tolist()
        model.residual_mu = float(residuals.mean())
        model.residual_sigma = float(residuals.std(ddof=1)) if residuals.size > 1 else 0.0

    Log.info(
        f"Fitted {len(trees)} trees on {train.size} samples ({cal.size} held out); "
        f"PPE mu={model.residual_mu:.4f} sigma={model.residual_sigma:.4f}"
    )
    return model


def predict(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    """
    Predicted latency in seconds, clamped at the configured floor.

    Raises
    ------
    FeatureMismatch
        If the column count differs from the model schema.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.features):
        raise FeatureMismatch(
            f"Expected {len(model.features)} features {list(model.features.names)}, got {X.shape[1]}",
            {"expected": list(model.features.names), "got": int(X.shape[1])},
        )
    raw = model.raw_predict(X)
    latency = np.exp(raw) if model.params.log_target else raw
    return np.maximum(latency, model.params.prediction_floor)


def predict_one(model: GbdtModel, features: Sequence[float]) -> float:
    return float(predict(model, np.asarray(features, dtype=float).reshape(1, -1))[0])
