"""Deterministic CART regression tree grown by greedy variance reduction."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

# Gains within this relative distance of the best are treated as ties, so the
# tie rule (lowest feature, then lowest threshold) decides rather than
# summation-order noise.
_REL_TIE_TOL = 1e-10


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 6
    min_leaf_size: int = 20
    n_trees: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be >= 1")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


def _exact_mean(values: np.ndarray) -> float:
    # fsum is order-independent, which keeps predictions invariant to row order
    return math.fsum(values.tolist()) / values.size


class RegressionTree:
    """Binary tree of axis-aligned splits ``x[feature] <= threshold`` with leaf means.

    Nodes are stored in flat arrays; ``feature == -1`` marks a leaf.
    """

    def __init__(self, feature, threshold, left, right, value, n_samples,
                 max_depth: int, min_leaf_size: int):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.n_samples = np.asarray(n_samples, dtype=np.int64)
        self.max_depth = max_depth
        self.min_leaf_size = min_leaf_size

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[node[idx]] >= 0
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "type": "tree",
            "max_depth": self.max_depth,
            "min_leaf_size": self.min_leaf_size,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"],
                   d["n_samples"], d["max_depth"], d["min_leaf_size"])


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Return (feature, threshold, left_mask) or None if nothing reduces variance."""
    n, d = X.shape
    yc = y - _exact_mean(y)
    parent_sse = float(np.dot(yc, yc))
    if n < 2 * min_leaf or parent_sse <= 0.0:
        return None
    total, total2 = yc.sum(), parent_sse
    left_n = np.arange(min_leaf, n - min_leaf + 1)
    per_feature = []
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xo = X[order, f]
        yo = yc[order]
        cs = np.cumsum(yo)[left_n - 1]
        cs2 = np.cumsum(yo * yo)[left_n - 1]
        sse_l = cs2 - cs * cs / left_n
        rn = n - left_n
        sse_r = (total2 - cs2) - (total - cs) ** 2 / rn
        gain = parent_sse - sse_l - sse_r
        valid = xo[left_n - 1] < xo[left_n]
        gain = np.where(valid, gain, -np.inf)
        per_feature.append((gain, xo))

    best = max(float(g.max()) for g, _ in per_feature)
    tol = _REL_TIE_TOL * parent_sse
    if not np.isfinite(best) or best <= tol:
        return None
    for f, (gain, xo) in enumerate(per_feature):
        hits = np.flatnonzero(gain >= best - tol)
        if hits.size:
            # candidates are in ascending threshold order; take the lowest
            i = int(left_n[hits[0]])
            lo, hi = xo[i - 1], xo[i]
            thr = 0.5 * (lo + hi)
            if not (lo <= thr < hi):
                thr = lo
            return f, float(thr), X[:, f] <= thr
    return None


def fit_tree(features, targets, hp: Optional[TreeParams] = None) -> RegressionTree:
    """Grow a regression tree depth-first.

    Each node takes the split with the largest reduction in summed squared
    error among candidates leaving at least ``min_leaf_size`` rows per side;
    growth stops at ``max_depth`` or when no split reduces the error.
    """
    hp = hp or TreeParams()
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if y.size == 0 or X.shape[0] == 0:
        raise ValueError("cannot fit a tree on empty input")
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} feature rows but {y.size} targets")
    if y.size < hp.min_leaf_size:
        raise ValueError(f"{y.size} rows < min_leaf_size={hp.min_leaf_size}")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("NaN in tree training data")

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []
    count: List[int] = []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(_exact_mean(y[rows]))
        count.append(int(rows.size))
        return len(feature) - 1

    stack = [(new_node(np.arange(y.size)), np.arange(y.size), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if depth >= hp.max_depth:
            continue
        found = _best_split(X[rows], y[rows], hp.min_leaf_size)
        if found is None:
            continue
        f, thr, mask = found
        lrows, rrows = rows[mask], rows[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))

    return RegressionTree(feature, threshold, left, right, value, count,
                          hp.max_depth, hp.min_leaf_size)


class BaggedTrees:
    """Average of trees fitted on fixed-seed bootstrap resamples."""

    def __init__(self, trees: List[RegressionTree]):
        self.trees = list(trees)

    def predict(self, X) -> np.ndarray:
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {"type": "bagged", "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "BaggedTrees":
        return cls([RegressionTree.from_dict(t) for t in d["trees"]])


def fit_regressor(features, targets, hp: TreeParams, stream: int = 0):
    """Single tree when ``hp.n_trees == 1``, otherwise a bagged ensemble.

    ``stream`` separates bootstrap streams of different base learners sharing
    one seed.
    """
    if hp.n_trees == 1:
        return fit_tree(features, targets, hp)
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    rng = np.random.default_rng([hp.seed, stream])
    trees = []
    for _ in range(hp.n_trees):
        rows = np.sort(rng.integers(0, y.size, size=y.size))
        trees.append(fit_tree(X[rows], y[rows], hp))
    return BaggedTrees(trees)


def regressor_from_dict(d: dict):
    if d["type"] == "tree":
        return RegressionTree.from_dict(d)
    if d["type"] == "bagged":
        return BaggedTrees.from_dict(d)
    raise ValueError(f"unknown regressor type {d['type']!r}")
