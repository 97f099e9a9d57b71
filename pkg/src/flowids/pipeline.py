"""End-to-end steps shared by the command line and the experiments.

preprocess: raw tables -> cleaned, split, scaled, PCA-projected arrays plus
the fitted transforms, bundled into one artifact file. train: artifact ->
checkpoint for any model tag. evaluate/predict: checkpoint (+ artifact or raw
rows) -> labels and metrics.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import container
from . import model as M
from .baselines import forest_fit, forest_predict, knn_fit, knn_predict, model_config_for
from .baselines.forest import forest_from_arrays, forest_to_arrays
from .baselines.knn import KnnModel
from .config import RunConfig
from .errors import DimensionMismatch, EmptyTable, IncompatibleArtifact, UnknownColumn, UnknownModel
from .evaluate import Metrics, compute_metrics
from .flow_ingest import (FlowTable, LabelSpace, SplitSpec, restrict_labels, stratified_split,
                          stratified_subsample)
from .preprocess import (CleanReport, MinMaxParams, PcaModel, apply_minmax, clean, fit_minmax,
                         fit_pca, transform_pca)
from .trainer import Checkpoint, train

NETWORK_MODELS = ("proposed", "cnn", "cnn-lstm-softmax", "dnn5")
CLASSICAL_MODELS = ("knn", "rf")
MODELS = NETWORK_MODELS + CLASSICAL_MODELS
PREP_KIND = "prep"

Log = Callable[[str], None]


@dataclass(eq=False)
class PrepArtifact:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    label_space: LabelSpace
    feature_names: tuple[str, ...]      # cleaned columns, before projection
    minmax: MinMaxParams
    pca: PcaModel
    clean_report: CleanReport
    settings: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.train_x.shape[1]


def preprocess_table(table: FlowTable, cfg: RunConfig, log: Log | None = None) -> PrepArtifact:
    """Clean, optionally subsample, split, scale on train, fit PCA on train."""
    cleaned, report = clean(table, cfg.drop_list)
    if cleaned.n_rows == 0:
        raise EmptyTable("no rows left after cleaning")
    if cfg.subsample or cfg.min_class_rows:
        total = cfg.subsample or cleaned.n_rows
        cleaned = stratified_subsample(cleaned, total, cfg.seed, cfg.min_class_rows)
    cleaned, space = restrict_labels(cleaned)
    train_t, test_t = stratified_split(cleaned, SplitSpec(cfg.test_fraction, cfg.seed))
    minmax = fit_minmax(train_t)
    train_s, test_s = apply_minmax(train_t, minmax), apply_minmax(test_t, minmax)
    pca = fit_pca(train_s, cfg.pca)
    if log is not None:
        log(f"rows: {train_t.n_rows} train, {test_t.n_rows} test, {len(space)} classes")
    settings = {"seed": cfg.seed, "pca": cfg.pca, "test_fraction": cfg.test_fraction,
                "subsample": cfg.subsample, "min_class_rows": cfg.min_class_rows,
                "drop_columns": list(cfg.drop_list)}
    return PrepArtifact(transform_pca(train_s, pca).features, train_t.labels,
                        transform_pca(test_s, pca).features, test_t.labels, space,
                        cleaned.feature_names, minmax, pca, report, settings)


def prep_bytes(art: PrepArtifact) -> bytes:
    meta = {
        "labels": {"names": list(art.label_space.names), "benign_id": art.label_space.benign_id},
        "feature_names": list(art.feature_names),
        "clean_report": {"dropped_columns": list(art.clean_report.dropped_columns),
                         "dropped_rows": art.clean_report.dropped_rows,
                         "nonfinite_cells": art.clean_report.nonfinite_cells},
        "settings": art.settings,
    }
    arrays = {"train_x": art.train_x, "train_y": art.train_y, "test_x": art.test_x, "test_y": art.test_y,
              "minmax/min": art.minmax.min, "minmax/max": art.minmax.max, "pca/mean": art.pca.mean,
              "pca/components": art.pca.components, "pca/ratio": art.pca.explained_variance_ratio}
    return container.pack(PREP_KIND, meta, arrays)


def save_prep(art: PrepArtifact, sink) -> bytes:
    payload = prep_bytes(art)
    container.write(sink, payload)
    return payload


def load_prep(source) -> PrepArtifact:
    _, meta, a = container.unpack(container.read(source), PREP_KIND)
    rep = meta["clean_report"]
    return PrepArtifact(
        a["train_x"], a["train_y"], a["test_x"], a["test_y"],
        LabelSpace(tuple(meta["labels"]["names"]), meta["labels"]["benign_id"]),
        tuple(meta["feature_names"]), MinMaxParams(a["minmax/min"], a["minmax/max"]),
        PcaModel(a["pca/mean"], a["pca/components"], a["pca/ratio"]),
        CleanReport(tuple(rep["dropped_columns"]), rep["dropped_rows"], rep["nonfinite_cells"]),
        meta["settings"])


# training --------------------------------------------------------------------


def network_config(tag: str, art: PrepArtifact, cfg: RunConfig) -> M.ModelConfig:
    if tag not in NETWORK_MODELS:
        raise UnknownModel(f"{tag!r} is not one of {', '.join(MODELS)}")
    n = len(art.label_space)
    return model_config_for(tag, n, art.width, cfg.model_base(n, art.width))


def _validation_split(art: PrepArtifact, cfg: RunConfig):
    if cfg.val_fraction <= 0:
        return art.train_x, art.train_y, None, None
    table = FlowTable(tuple(f"PC{i + 1}" for i in range(art.width)), art.train_x, art.train_y,
                      art.label_space.names)
    fit_part, val_part = stratified_split(table, SplitSpec(cfg.val_fraction, cfg.seed + 1))
    return fit_part.features, fit_part.labels, val_part.features, val_part.labels


def train_model(art: PrepArtifact, tag: str, cfg: RunConfig, log: Log | None = None) -> Checkpoint:
    """Fit model ``tag`` on the artifact's training split.

    Networks hold out ``val_fraction`` of the training rows for model
    selection; the classical models use all of them.
    """
    if tag not in MODELS:
        raise UnknownModel(f"{tag!r} is not one of {', '.join(MODELS)}")
    common = dict(label_space=art.label_space, minmax=art.minmax, pca=art.pca,
                  feature_names=art.feature_names)
    settings = {"config": asdict(cfg), "prep": art.settings}
    n_classes = len(art.label_space)
    if tag == "knn":
        knn = knn_fit(art.train_x, art.train_y, cfg.knn_k, n_classes)  # validates k
        return Checkpoint("knn", arrays={"knn.features": knn.features, "knn.labels": knn.labels},
                          meta={**settings, "k": cfg.knn_k}, **common)
    if tag == "rf":
        forest = forest_fit(art.train_x, art.train_y, cfg.rf_trees, cfg.rf_max_depth or None, cfg.seed,
                            n_classes=n_classes)
        meta = {**settings, "n_classes": n_classes, "n_features": forest.n_features,
                "max_depth": forest.max_depth, "max_features": forest.max_features,
                "tree_seeds": forest.tree_seeds}
        return Checkpoint("rf", arrays=forest_to_arrays(forest), meta=meta, **common)
    mcfg = network_config(tag, art, cfg)
    params = M.build(mcfg, seed=cfg.seed)
    fx, fy, vx, vy = _validation_split(art, cfg)
    best, history = train(params, fx, fy, vx, vy, cfg.train_config(), log=log)
    return Checkpoint(tag, model_config=mcfg, params=best, history=history, meta=settings, **common)


# inference -------------------------------------------------------------------


def predict_projected(ckpt: Checkpoint, x: np.ndarray) -> np.ndarray:
    """Labels for rows already scaled and projected into the checkpoint's space."""
    x = np.asarray(x, dtype=np.float64)
    width = ckpt.pca.k if ckpt.pca is not None else x.shape[1]
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionMismatch(f"inputs have width {x.shape[-1]}, checkpoint expects {width}")
    if ckpt.kind == "knn":
        model = KnnModel(ckpt.arrays["knn.features"], ckpt.arrays["knn.labels"].astype(np.int64),
                         int(ckpt.meta["k"]), len(ckpt.label_space))
        return knn_predict(model, x)
    if ckpt.kind == "rf":
        m = ckpt.meta
        forest = forest_from_arrays(ckpt.arrays, m["n_classes"], m["n_features"], m["max_depth"],
                                    m["max_features"], m["tree_seeds"])
        return forest_predict(forest, x)
    if ckpt.params is None:
        raise UnknownModel(f"checkpoint kind {ckpt.kind!r} carries no parameters")
    return M.predict(ckpt.params, x)


def check_compatible(ckpt: Checkpoint, art: PrepArtifact) -> None:
    if ckpt.pca is not None and ckpt.pca.k != art.width:
        raise DimensionMismatch(f"artifact features are {art.width} wide, checkpoint expects {ckpt.pca.k}")
    if ckpt.label_space != art.label_space:
        raise IncompatibleArtifact("artifact and checkpoint label spaces differ")
    same = (ckpt.minmax is not None and ckpt.pca is not None
            and ckpt.minmax.min.tobytes() == art.minmax.min.tobytes()
            and ckpt.minmax.max.tobytes() == art.minmax.max.tobytes()
            and ckpt.pca.components.tobytes() == art.pca.components.tobytes()
            and ckpt.pca.mean.tobytes() == art.pca.mean.tobytes())
    if not same:
        raise IncompatibleArtifact("artifact was preprocessed with different fitted transforms")


def evaluate_checkpoint(ckpt: Checkpoint, art: PrepArtifact) -> Metrics:
    check_compatible(ckpt, art)
    return compute_metrics(art.test_y, predict_projected(ckpt, art.test_x), len(art.label_space))


def project_raw(ckpt: Checkpoint, table: FlowTable) -> tuple[np.ndarray, np.ndarray]:
    """Select, scale and project raw rows; returns (projected rows, kept row indices).

    Rows with non-finite cells cannot be scored and are skipped, as in training.
    """
    missing = [n for n in ckpt.feature_names if n not in table.feature_names]
    if missing:
        raise UnknownColumn(f"input lacks columns: {', '.join(missing[:5])}")
    cols = [table.feature_names.index(n) for n in ckpt.feature_names]
    x = table.features[:, cols]
    keep = np.flatnonzero(np.isfinite(x).all(axis=1))
    sub = FlowTable(ckpt.feature_names, x[keep], np.zeros(keep.size, np.int64), ("?",))
    scaled = apply_minmax(sub, ckpt.minmax)
    return transform_pca(scaled, ckpt.pca).features, keep
