"""Degree-2 polynomial least-squares baseline for the feature ablation."""

from itertools import combinations_with_replacement

import numpy as np
from pydantic import BaseModel, Field

from baseline.features import FeatureSchema
from services.errors import FeatureMismatch, InsufficientData, InvalidTargets

RIDGE = 1e-8


class PolynomialModel(BaseModel):
    features: FeatureSchema
    mean: list[float]
    scale: list[float]
    # Term names, "1" first, then x_i and x_i*x_j
    terms: list[str]
    coefficients: list[float] = Field(default_factory=list)

    def ranked_terms(self) -> list[tuple[str, float]]:
        pairs = [(t, abs(c)) for t, c in zip(self.terms, self.coefficients) if t != "1"]
        return sorted(pairs, key=lambda item: (-item[1], item[0]))

    def ranked_features(self) -> list[tuple[str, float]]:
        """Features by largest |coefficient| among the terms they appear in."""
        best: dict[str, float] = {name: 0.0 for name in self.features.names}
        for term, weight in self.ranked_terms():
            for name in term.split("*"):
                best[name] = max(best[name], weight)
        return sorted(best.items(), key=lambda item: (-item[1], item[0]))


def _expand(Z: np.ndarray, names: tuple[str, ...]) -> tuple[np.ndarray, list[str]]:
    columns = [np.ones(Z.shape[0])]
    terms = ["1"]
    for i, name in enumerate(names):
        columns.append(Z[:, i])
        terms.append(name)
    for i, j in combinations_with_replacement(range(len(names)), 2):
        columns.append(Z[:, i] * Z[:, j])
        terms.append(f"{names[i]}*{names[j]}")
    return np.column_stack(columns), terms


def fit_polynomial(X: np.ndarray, y: np.ndarray, schema: FeatureSchema) -> PolynomialModel:
    """
    Ordinary least squares on all degree <= 2 terms of standardized features.

    Solved with the normal equations and a 1e-8 ridge so collinear
    columns do not make the system singular.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[1] != len(schema):
        raise FeatureMismatch(f"Expected {len(schema)} features, got {X.shape[1]}", {"expected": list(schema.names)})
    if y.size < 2:
        raise InsufficientData("Polynomial fit needs at least 2 samples", {"got": int(y.size)})
    if not np.all(np.isfinite(y)):
        raise InvalidTargets("Targets must be finite")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    design, terms = _expand((X - mean) / scale, schema.names)
    gram = design.T @ design + RIDGE * np.eye(design.shape[1])
    coefficients = np.linalg.solve(gram, design.T @ y)
    return PolynomialModel(
        features=schema, mean=mean.tolist(), scale=scale.tolist(), terms=terms, coefficients=coefficients.tolist()
    )


def predict_polynomial(model: PolynomialModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.features):
        raise FeatureMismatch(
            f"Expected {len(model.features)} features, got {X.shape[1]}", {"expected": list(model.features.names)}
        )
    design, _ = _expand((X - np.asarray(model.mean)) / np.asarray(model.scale), model.features.names)
    return design @ np.asarray(model.coefficients)
