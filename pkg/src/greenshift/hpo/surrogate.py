"""Random-forest surrogate with across-tree variance and expected improvement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

N_TREES = 32
MIN_LEAF = 3
_SPLIT_ATTEMPTS = 16


class InsufficientDataError(ValueError):
    """Too few observations to fit a surrogate; the caller should sample at random."""


@dataclass
class Tree:
    # parallel node arrays; feature == -1 marks a leaf whose prediction is ``value``
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]


def grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, min_leaf: int = MIN_LEAF) -> Tree:
    """Split on a random feature at the midpoint of the node's range; stop at pure or tiny nodes."""
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(y)))]
    while stack:
        node, idx = stack.pop()
        value[node] = float(y[idx].mean())
        if len(idx) < 2 * min_leaf or np.ptp(y[idx]) == 0.0:
            continue
        Xn = X[idx]
        spread = np.ptp(Xn, axis=0)
        candidates = np.nonzero(spread > 0)[0]
        for _ in range(min(_SPLIT_ATTEMPTS, len(candidates))):
            f = int(candidates[rng.integers(len(candidates))])
            t = float((Xn[:, f].min() + Xn[:, f].max()) / 2.0)
            mask = Xn[:, f] <= t
            n_left = int(mask.sum())
            if min_leaf <= n_left <= len(idx) - min_leaf:
                feature[node], threshold[node] = f, t
                left[node], right[node] = new_node(), new_node()
                stack.append((left[node], idx[mask]))
                stack.append((right[node], idx[~mask]))
                break
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value),
    )


class RandomForestSurrogate:
    def __init__(self, trees: list[Tree]):
        self.trees = trees

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, rng: np.random.Generator, n_trees: int = N_TREES) -> RandomForestSurrogate:
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if len(y) < 2 or not np.isfinite(y).all():
            raise InsufficientDataError(f"need at least 2 finite targets, got {len(y)}")
        trees = []
        for _ in range(n_trees):
            sample = rng.integers(0, len(y), size=len(y))
            trees.append(grow_tree(X[sample], y[sample], rng))
        return cls(trees)

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance across the per-tree predictions."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        preds = np.stack([tree.predict(X) for tree in self.trees])
        return preds.mean(axis=0), preds.var(axis=0)


def expected_improvement(mean: np.ndarray, variance: np.ndarray, incumbent: float) -> np.ndarray:
    """EI for minimization under a normal approximation; reduces to ``max(incumbent - mean, 0)`` at zero variance."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    improvement = incumbent - mean
    ei = np.maximum(improvement, 0.0)
    pos = sigma > 0
    z = improvement[pos] / sigma[pos]
    ei[pos] = improvement[pos] * ndtr(z) + sigma[pos] * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    return np.maximum(ei, 0.0)
