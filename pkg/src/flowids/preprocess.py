"""Cleaning, min-max scaling and PCA for flow tables.

Parameters are always fitted on the training split and then applied to any
other split, so no test statistics leak into the transforms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (DegenerateData, DimensionMismatch, EmptyTable, KOutOfRange,
                     UnknownColumn)
from .flow_ingest import FlowTable


@dataclass(frozen=True)
class CleanReport:
    dropped_columns: tuple[str, ...]
    dropped_rows: int
    nonfinite_cells: int


@dataclass(frozen=True, eq=False)
class MinMaxParams:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        if self.min.shape != self.max.shape or np.any(self.min > self.max):
            raise ValueError("invalid min/max parameters")

    @property
    def n_features(self) -> int:
        return self.min.shape[0]


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray                      # (d,)
    components: np.ndarray                # (k, d), orthonormal rows
    explained_variance_ratio: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


def clean(table: FlowTable, drop_columns: Sequence[str] = ()) -> tuple[FlowTable, CleanReport]:
    """Drop the named columns, then every row holding NaN or +/-inf."""
    missing = [c for c in drop_columns if c not in table.feature_names]
    if missing:
        raise UnknownColumn(", ".join(missing))
    drop = set(drop_columns)
    keep_cols = [i for i, n in enumerate(table.feature_names) if n not in drop]
    feats = table.features[:, keep_cols]
    finite = np.isfinite(feats)
    bad_rows = ~finite.all(axis=1)
    out = FlowTable(tuple(table.feature_names[i] for i in keep_cols), feats[~bad_rows],
                    table.labels[~bad_rows], table.label_names)
    report = CleanReport(tuple(n for n in table.feature_names if n in drop),
                         int(bad_rows.sum()), int((~finite).sum()))
    return out, report


def fit_minmax(train: FlowTable) -> MinMaxParams:
    if train.n_rows == 0:
        raise EmptyTable("cannot fit min-max on an empty table")
    return MinMaxParams(train.features.min(axis=0).copy(), train.features.max(axis=0).copy())


def apply_minmax(table: FlowTable, params: MinMaxParams) -> FlowTable:
    """Scale to [0, 1]; constant features map to 0, out-of-range values clamp."""
    if table.n_cols != params.n_features:
        raise DimensionMismatch(f"table has {table.n_cols} features, params {params.n_features}")
    span = params.max - params.min
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (table.features - params.min) / safe, 0.0)
    return table.with_features(np.clip(scaled, 0.0, 1.0))


def fit_pca(train: FlowTable | np.ndarray, k: int) -> PcaModel:
    """Top-``k`` principal directions via SVD of the centred training matrix.

    Each component is sign-flipped so its largest-magnitude entry (first one
    on ties) is non-negative.
    """
    x = train.features if isinstance(train, FlowTable) else np.asarray(train, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise DegenerateData(f"PCA needs at least 2 rows, got {n}")
    if not 1 <= k <= min(n, d):
        raise KOutOfRange(f"k={k} outside [1, {min(n, d)}]")
    if not np.all(np.isfinite(x)):
        raise DegenerateData("PCA input contains non-finite values")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    variances = s ** 2 / (n - 1)
    total = variances.sum()
    ratios = variances / total if total > 0 else np.zeros_like(variances)
    comps = vt[:k].copy()
    pivots = np.abs(comps).argmax(axis=1)
    signs = np.where(comps[np.arange(k), pivots] < 0, -1.0, 1.0)
    comps *= signs[:, None]
    return PcaModel(mean, comps, ratios[:k].copy())


def transform_pca(table: FlowTable, model: PcaModel) -> FlowTable:
    if table.n_cols != model.n_features:
        raise DimensionMismatch(f"table has {table.n_cols} features, PCA expects {model.n_features}")
    z = (table.features - model.mean) @ model.components.T
    return table.with_features(z, tuple(f"PC{i + 1}" for i in range(model.k)))


def reconstruct_pca(z: np.ndarray, model: PcaModel) -> np.ndarray:
    return model.mean + np.asarray(z) @ model.components


def explained_variance_curve(model: PcaModel) -> list[tuple[int, float]]:
    """Cumulative explained variance: ``[(1, r1), (2, r1 + r2), ...]``."""
    cumulative = np.cumsum(model.explained_variance_ratio)
    return [(j + 1, float(v)) for j, v in enumerate(cumulative)]


def components_for_variance(model: PcaModel, target: float) -> int:
    """Smallest component count whose cumulative ratio reaches ``target``."""
    for count, value in explained_variance_curve(model):
        if value >= target:
            return count
    return model.k


def format_dump(params: MinMaxParams | None, pca: PcaModel | None,
                feature_names: Sequence[str] = ()) -> str:
    """Human-readable listing of fitted preprocessing state."""
    lines = []
    if params is not None:
        lines.append("[minmax]")
        names = list(feature_names) or [f"f{i}" for i in range(params.n_features)]
        for name, lo, hi in zip(names, params.min, params.max):
            lines.append(f"{name}\t{lo!r}\t{hi!r}")
    if pca is not None:
        lines.append(f"[pca] k={pca.k} d={pca.n_features}")
        for count, value in explained_variance_curve(pca):
            lines.append(f"{count}\t{value:.6f}")
    return "\n".join(lines) + "\n"
