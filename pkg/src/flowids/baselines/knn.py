from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import DimensionMismatch, EmptyTable


@dataclass(frozen=True, eq=False)
class KnnModel:
    features: np.ndarray
    labels: np.ndarray
    k: int = 5
    n_classes: int | None = None

    def __post_init__(self):
        if not 1 <= self.k <= self.features.shape[0]:
            raise ValueError(f"k={self.k} must lie in [1, {self.features.shape[0]}]")


def knn_fit(features, labels, k: int = 5, n_classes: int | None = None) -> KnnModel:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] == 0:
        raise EmptyTable("KNN needs at least one stored row")
    y = np.asarray(labels, dtype=np.int64)
    return KnnModel(x, y, k, n_classes)


def knn_predict(model: KnnModel, queries, chunk: int = 512) -> np.ndarray:
    """Majority label among the k nearest stored rows (Euclidean).

    Equal distances prefer the lower stored row index; tied votes prefer the
    lower label id.
    """
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != model.features.shape[1]:
        raise DimensionMismatch(f"queries have width {q.shape[-1]}, model {model.features.shape[1]}")
    k = model.k
    n_labels = model.n_classes or int(model.labels.max()) + 1
    out = np.empty(q.shape[0], dtype=np.int64)
    for start in range(0, q.shape[0], chunk):
        d = cdist(q[start:start + chunk], model.features, "sqeuclidean")
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        for r, row in enumerate(d):
            cand = np.flatnonzero(row <= kth[r])
            nearest = cand[np.argsort(row[cand], kind="stable")[:k]]
            votes = np.bincount(model.labels[nearest], minlength=n_labels)
            out[start + r] = int(votes.argmax())
    return out
