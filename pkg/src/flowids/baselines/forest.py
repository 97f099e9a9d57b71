"""Random forest of axis-aligned CART trees with Gini splitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch, EmptyTable


@dataclass(eq=False)
class Tree:
    """Flat node arrays; ``feature[n] == -1`` marks a leaf whose label is ``value[n]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for n in range(self.n_nodes):  # children are always appended after parents
            if self.feature[n] >= 0:
                depth[self.left[n]] = depth[self.right[n]] = depth[n] + 1
        return int(depth.max())

    def apply(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            n = node[idx]
            go_left = x[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]


@dataclass(eq=False)
class ForestModel:
    trees: list[Tree]
    n_classes: int
    n_features: int
    max_depth: int | None
    max_features: int
    tree_seeds: list[int] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _gini_split(values: np.ndarray, onehot: np.ndarray):
    """Best Gini threshold on one feature: (weighted impurity, threshold) or None.

    Candidates are midpoints between consecutive distinct sorted values, scanned
    in increasing order; the first minimum wins.
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    distinct = np.flatnonzero(v[1:] > v[:-1])  # split after position i
    if distinct.size == 0:
        return None
    n = v.size
    left_counts = np.cumsum(onehot[order], axis=0)[distinct]
    right_counts = onehot.sum(axis=0) - left_counts
    n_left = (distinct + 1).astype(np.float64)
    n_right = n - n_left
    gini_left = 1.0 - np.sum(left_counts ** 2, axis=1) / n_left ** 2
    gini_right = 1.0 - np.sum(right_counts ** 2, axis=1) / n_right ** 2
    weighted = (n_left * gini_left + n_right * gini_right) / n
    best = int(np.argmin(weighted))
    i = distinct[best]
    return float(weighted[best]), 0.5 * (v[i] + v[i + 1])


def _grow_tree(x, y, n_classes, max_depth, max_features, rng, min_samples_split=2) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(-1)
        return len(feature) - 1

    onehot_all = np.eye(n_classes)[y]
    d = x.shape[1]
    root = new_node()
    stack = [(root, np.arange(x.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        counts = onehot_all[rows].sum(axis=0)
        value[node] = int(np.argmax(counts))
        pure = np.count_nonzero(counts) <= 1
        if pure or rows.size < min_samples_split or (max_depth is not None and depth >= max_depth):
            continue
        order = rng.permutation(d)
        best = None
        # sampled features first; fall back to the rest only if none can split
        for group in (order[:max_features], order[max_features:]):
            for f in group:
                found = _gini_split(x[rows, f], onehot_all[rows])
                if found is not None and (best is None or found[0] < best[0]):
                    best = (found[0], found[1], int(f))
            if best is not None:
                break
        if best is None:
            continue
        _, thr, f = best
        mask = x[rows, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node] = new_node()
        right[node] = new_node()
        stack.append((right[node], rows[~mask], depth + 1))
        stack.append((left[node], rows[mask], depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value, dtype=np.int64))


def forest_fit(features, labels, n_trees: int = 100, max_depth: int | None = 16, seed: int = 0,
               max_features: int | None = None, bootstrap: bool = True,
               n_classes: int | None = None) -> ForestModel:
    """Bootstrap-aggregated Gini trees considering sqrt(d) features per split."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise EmptyTable("cannot fit a forest on an empty table")
    n, d = x.shape
    n_classes = n_classes or int(y.max()) + 1
    if max_features is None:
        max_features = max(1, int(math.isqrt(d)))
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_trees)]
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(_grow_tree(x[rows], y[rows], n_classes, max_depth, max_features, rng))
    return ForestModel(trees, n_classes, d, max_depth, max_features, seeds)


def forest_predict(model: ForestModel, queries) -> np.ndarray:
    """Majority vote over trees; ties go to the lower label id."""
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != model.n_features:
        raise DimensionMismatch(f"queries have width {q.shape[-1]}, forest {model.n_features}")
    votes = np.zeros((q.shape[0], model.n_classes), dtype=np.int64)
    rows = np.arange(q.shape[0])
    for tree in model.trees:
        np.add.at(votes, (rows, tree.predict(q)), 1)
    return votes.argmax(axis=1)


def forest_to_arrays(model: ForestModel) -> dict[str, np.ndarray]:
    """Flatten a forest into named arrays (for checkpoints)."""
    offsets = np.cumsum([0] + [t.n_nodes for t in model.trees])
    out = {"forest.offsets": offsets.astype(np.float64)}
    for name in ("feature", "threshold", "left", "right", "value"):
        out[f"forest.{name}"] = np.concatenate([getattr(t, name) for t in model.trees]).astype(np.float64)
    return out


def forest_from_arrays(arrays: dict[str, np.ndarray], n_classes: int, n_features: int,
                       max_depth: int | None, max_features: int, tree_seeds=()) -> ForestModel:
    offsets = arrays["forest.offsets"].astype(np.int64)
    trees = []
    for a, b in zip(offsets[:-1], offsets[1:]):
        part = {k: arrays[f"forest.{k}"][a:b] for k in ("feature", "threshold", "left", "right", "value")}
        trees.append(Tree(part["feature"].astype(np.int64), part["threshold"].copy(),
                          part["left"].astype(np.int64), part["right"].astype(np.int64),
                          part["value"].astype(np.int64)))
    return ForestModel(trees, n_classes, n_features, max_depth, max_features, list(tree_seeds))
