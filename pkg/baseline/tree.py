"""Least-squares regression tree used as the boosting weak learner."""

from typing import Any

import numpy as np
from pydantic import BaseModel, Field

LEAF = -1


class RegressionTree(BaseModel):
    """
    Axis-aligned regression tree stored as flat node arrays.

    Node 0 is the root. For split nodes ``feature`` is the column index and
    samples with ``x <= threshold`` go left. Leaves have ``feature == -1``
    and carry their prediction in ``value``.
    """

    feature: list[int] = Field(default_factory=list)
    threshold: list[float] = Field(default_factory=list)
    left: list[int] = Field(default_factory=list)
    right: list[int] = Field(default_factory=list)
    value: list[float] = Field(default_factory=list)

    # Split gain (SSE reduction) per node, 0 for leaves
    gain: list[float] = Field(default_factory=list)

    def _add_node(self, value: float) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(float(value))
        self.gain.append(0.0)
        return len(self.value) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])

        active = feature[node] != LEAF
        while active.any():
            idx = rows[active]
            current = node[idx]
            goes_left = X[idx, feature[current]] <= threshold[current]
            node[idx] = np.where(goes_left, left[current], right[current])
            active = feature[node] != LEAF
        return np.asarray(self.value)[node]

    def feature_gains(self, n_features: int) -> np.ndarray:
        gains = np.zeros(n_features)
        for f, g in zip(self.feature, self.gain):
            if f != LEAF:
                gains[f] += g
        return gains

    def to_record(self, node: int = 0) -> dict[str, Any]:
        """Nested split/leaf record of the subtree rooted at ``node``."""
        if self.feature[node] == LEAF:
            return {"leaf": self.value[node]}
        return {
            "feature": self.feature[node],
            "threshold": self.threshold[node],
            "gain": self.gain[node],
            "value": self.value[node],
            "left": self.to_record(self.left[node]),
            "right": self.to_record(self.right[node]),
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "RegressionTree":
        tree = cls()

        def walk(sub: dict[str, Any]) -> int:
            if "leaf" in sub:
                return tree._add_node(sub["leaf"])
            node = tree._add_node(sub.get("value", 0.0))
            tree.feature[node] = int(sub["feature"])
            tree.threshold[node] = float(sub["threshold"])
            tree.gain[node] = float(sub.get("gain", 0.0))
            tree.left[node] = walk(sub["left"])
            tree.right[node] = walk(sub["right"])
            return node

        walk(record)
        return tree


def best_split(X: np.ndarray, y: np.ndarray, min_samples_leaf: int) -> tuple[int, float, float] | None:
    """
    Exhaustive search for the split maximizing the SSE reduction.

    Thresholds are midpoints between consecutive distinct values. Ties keep
    the earlier feature and the lower threshold.

    Returns
    -------
    tuple[int, float, float] | None
        (feature, threshold, gain), or None when no split has positive gain.
    """
    n, d = X.shape
    if n < 2 * min_samples_leaf:
        return None

    total = y.sum()
    parent_term = total * total / n
    best: tuple[int, float, float] | None = None

    for feature in range(d):
        order = np.argsort(X[:, feature], kind="stable")
        xs = X[order, feature]
        ys = y[order]

        left_sum = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        n_right = n - n_left
        gains = left_sum**2 / n_left + (total - left_sum) ** 2 / n_right - parent_term

        valid = (xs[:-1] < xs[1:]) & (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
        if not valid.any():
            continue
        gains = np.where(valid, gains, -np.inf)
        pos = int(np.argmax(gains))
        gain = float(gains[pos])
        if gain <= 0:
            continue
        if best is None or gain > best[2]:
            threshold = (xs[pos] + xs[pos + 1]) / 2.0
            if threshold >= xs[pos + 1]:
                threshold = float(xs[pos])
            best = (feature, float(threshold), gain)
    return best


def fit_tree(X: np.ndarray, y: np.ndarray, max_depth: int, min_samples_leaf: int) -> RegressionTree:
    """Grow a tree depth-first on (X, y) with mean-valued leaves."""
    tree = RegressionTree()

    def grow(rows: np.ndarray, depth: int) -> int:
        node = tree._add_node(y[rows].mean())
        if depth >= max_depth:
            return node
        split = best_split(X[rows], y[rows], min_samples_leaf)
        if split is None:
            return node
        feature, threshold, gain = split
        mask = X[rows, feature] <= threshold
        tree.feature[node] = feature
        tree.threshold[node] = threshold
        tree.gain[node] = gain
        tree.left[node] = grow(rows[mask], depth + 1)
        tree.right[node] = grow(rows[~mask], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return tree
