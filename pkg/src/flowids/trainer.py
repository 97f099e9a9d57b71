"""Mini-batch training loop and checkpoint serialization."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import container
from . import model as M
from .errors import EmptyData, InvalidConfig, LabelOutOfRange, NonFiniteLoss
from .flow_ingest import LabelSpace
from .preprocess import MinMaxParams, PcaModel
from .tensor import Tape

OPTIMIZERS = ("adam", "sgd_momentum")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 10
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    early_stop_patience: int = 0  # 0 disables early stopping
    shuffle: bool = True
    class_weights: bool = False   # inverse-frequency sample weights
    grad_shards: int = 1          # mini-batch split for gradient computation
    workers: int = 1              # threads computing shards; never changes results

    def validate(self) -> "TrainConfig":
        problems = []
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            problems.append("learning_rate must be finite and non-negative")
        if self.optimizer not in OPTIMIZERS:
            problems.append(f"optimizer must be one of {OPTIMIZERS}")
        if not 0 <= self.momentum < 1 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            problems.append("momentum and betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            problems.append("adam_eps must be positive")
        if self.early_stop_patience < 0:
            problems.append("early_stop_patience must be >= 0")
        if self.grad_shards < 1 or self.workers < 1:
            problems.append("grad_shards and workers must be >= 1")
        if problems:
            raise InvalidConfig("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int            # 1-based
    train_loss: float     # mean over the epoch's batches
    val_accuracy: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    @property
    def best_val_accuracy(self) -> float:
        return self.records[self.best_epoch - 1].val_accuracy if self.records else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_accuracy"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_accuracy)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records], "best_epoch": self.best_epoch,
                "stopped_early": self.stopped_early}

    @classmethod
    def from_dict(cls, d: dict) -> "History":
        return cls([EpochRecord(**r) for r in d["records"]], d["best_epoch"], d["stopped_early"])


LossFn = Callable[..., object]


def inverse_frequency_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-class weight n / (present_classes * count), 0 for absent classes."""
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    present = np.count_nonzero(counts)
    out = np.zeros(n_classes)
    np.divide(labels.size, present * counts, out=out, where=counts > 0)
    return out


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


class _Adam:
    def __init__(self, shapes, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, tensors, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.data -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


class _Momentum:
    def __init__(self, shapes, cfg: TrainConfig):
        self.cfg = cfg
        self.velocity = [np.zeros(s) for s in shapes]

    def step(self, tensors, grads):
        for p, g, v in zip(tensors, grads, self.velocity):
            v *= self.cfg.momentum
            v += g
            p.data -= self.cfg.learning_rate * v


def _check_data(x, y, n_classes, input_length, what):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyData(f"{what} data is empty")
    if y.shape != (x.shape[0],):
        raise EmptyData(f"{what} has {x.shape[0]} rows but {y.size} labels")
    if y.min() < 0 or y.max() >= n_classes:
        raise LabelOutOfRange(f"{what} labels must lie in [0, {n_classes})")
    if x.shape[1] != input_length:
        raise InvalidConfig(f"{what} width {x.shape[1]} != model input_length {input_length}")
    return x, y


def batch_gradients(params: M.NetworkParams, x: np.ndarray, y: np.ndarray, seed: int,
                    weights: np.ndarray | None = None, shards: int = 1,
                    pool: ThreadPoolExecutor | None = None,
                    loss_fn: LossFn = M.loss) -> tuple[float, list[np.ndarray]]:
    """Loss value and gradients for one mini-batch.

    The batch is cut into ``shards`` contiguous pieces; shard losses are scaled
    by their share of the batch weight, so they sum to the whole-batch loss,
    and the gradients are reduced in shard order whether or not a thread pool
    computes them.
    """
    tensors = params.values()
    w = np.ones(x.shape[0]) if weights is None else weights
    total = w.sum()
    bounds = np.linspace(0, x.shape[0], min(shards, x.shape[0]) + 1).astype(int)

    def one(s):
        lo, hi = bounds[s], bounds[s + 1]
        share = w[lo:hi].sum() / total
        with Tape() as tape:
            value = loss_fn(params, x[lo:hi], y[lo:hi], train_mode=True,
                            seed=_derived_seed(seed, s), sample_weights=None if weights is None else w[lo:hi])
            grads = tape.gradients(value, tensors)
        return float(value.data) * share, [g * share for g in grads]

    jobs = range(len(bounds) - 1)
    parts = list(pool.map(one, jobs)) if pool is not None else [one(s) for s in jobs]
    loss_value = 0.0
    grads = [np.zeros_like(t.data) for t in tensors]
    for value, gs in parts:
        loss_value += value
        for acc, g in zip(grads, gs):
            acc += g
    return loss_value, grads


def train(params: M.NetworkParams, train_x, train_y, val_x=None, val_y=None,
          config: TrainConfig = TrainConfig(), loss_fn: LossFn = M.loss,
          log: Callable[[str], None] | None = None) -> tuple[M.NetworkParams, History]:
    """Train a copy of ``params``; returns (best-validation params, history).

    Without a validation set, accuracy on the training rows drives model
    selection. The input params are never modified.
    """
    cfg = config.validate()
    mcfg = params.config
    x, y = _check_data(train_x, train_y, mcfg.n_classes, mcfg.input_length, "training")
    if val_x is None:
        vx, vy = x, y
    else:
        vx, vy = _check_data(val_x, val_y, mcfg.n_classes, mcfg.input_length, "validation")
    work = params.copy()
    tensors = work.values()
    opt_cls = _Adam if cfg.optimizer == "adam" else _Momentum
    opt = opt_cls([t.shape for t in tensors], cfg)
    weights = inverse_frequency_weights(y, mcfg.n_classes)[y] if cfg.class_weights else None
    history = History()
    best, best_acc, since_best = work.copy(), -1.0, 0
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = (np.random.default_rng([cfg.seed, epoch]).permutation(x.shape[0])
                     if cfg.shuffle else np.arange(x.shape[0]))
            losses = []
            for b, lo in enumerate(range(0, x.shape[0], cfg.batch_size), start=1):
                idx = order[lo:lo + cfg.batch_size]
                value, grads = batch_gradients(
                    work, x[idx], y[idx], _derived_seed(cfg.seed, epoch, b),
                    None if weights is None else weights[idx], cfg.grad_shards, pool, loss_fn)
                if not math.isfinite(value) or not all(np.isfinite(g).all() for g in grads):
                    raise NonFiniteLoss(epoch, b)
                opt.step(tensors, grads)
                losses.append(value)
            acc = float(np.mean(M.predict(work, vx) == vy))
            history.records.append(EpochRecord(epoch, float(np.mean(losses)), acc))
            if log is not None:
                log(f"epoch {epoch}: train_loss {np.mean(losses):.6f} val_accuracy {acc:.4f}")
            if acc > best_acc:
                best, best_acc, since_best = work.copy(), acc, 0
                history.best_epoch = epoch
            else:
                since_best += 1
                if cfg.early_stop_patience and since_best >= cfg.early_stop_patience:
                    history.stopped_early = True
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return best, history


# checkpoints ---------------------------------------------------------------

CHECKPOINT_KIND = "checkpoint"


@dataclass(eq=False)
class Checkpoint:
    """Everything needed to predict from raw (cleaned) feature rows.

    ``arrays`` and ``meta`` hold state of models that are not tensor networks
    (stored KNN rows, forest nodes) plus free-form settings.
    """

    kind: str
    label_space: LabelSpace
    model_config: M.ModelConfig | None = None
    params: M.NetworkParams | None = None
    minmax: MinMaxParams | None = None
    pca: PcaModel | None = None
    history: History | None = None
    feature_names: tuple[str, ...] = ()
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    arrays: dict[str, np.ndarray] = {}
    if ckpt.params is not None:
        arrays.update({f"param/{k}": v for k, v in ckpt.params.arrays().items()})
    if ckpt.minmax is not None:
        arrays["minmax/min"], arrays["minmax/max"] = ckpt.minmax.min, ckpt.minmax.max
    if ckpt.pca is not None:
        arrays["pca/mean"] = ckpt.pca.mean
        arrays["pca/components"] = ckpt.pca.components
        arrays["pca/ratio"] = ckpt.pca.explained_variance_ratio
    arrays.update({f"extra/{k}": v for k, v in ckpt.arrays.items()})
    config = ckpt.model_config or (ckpt.params.config if ckpt.params is not None else None)
    meta = {
        "kind": ckpt.kind,
        "labels": {"names": list(ckpt.label_space.names), "benign_id": ckpt.label_space.benign_id},
        "model_config": None if config is None else config.to_dict(),
        "history": None if ckpt.history is None else ckpt.history.to_dict(),
        "feature_names": list(ckpt.feature_names),
        "extra": ckpt.meta,
    }
    return container.pack(CHECKPOINT_KIND, meta, arrays)


def save_checkpoint(ckpt: Checkpoint, sink) -> bytes:
    payload = checkpoint_bytes(ckpt)
    container.write(sink, payload)
    return payload


def load_checkpoint(source) -> Checkpoint:
    _, meta, arrays = container.unpack(container.read(source), CHECKPOINT_KIND)
    config = None if meta["model_config"] is None else M.ModelConfig.from_dict(meta["model_config"])
    params_arrays = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    params = M.NetworkParams.from_arrays(config, params_arrays) if params_arrays else None
    minmax = MinMaxParams(arrays["minmax/min"], arrays["minmax/max"]) if "minmax/min" in arrays else None
    pca = (PcaModel(arrays["pca/mean"], arrays["pca/components"], arrays["pca/ratio"])
           if "pca/mean" in arrays else None)
    labels = meta["labels"]
    return Checkpoint(
        kind=meta["kind"],
        label_space=LabelSpace(tuple(labels["names"]), labels["benign_id"]),
        model_config=config, params=params, minmax=minmax, pca=pca,
        history=None if meta["history"] is None else History.from_dict(meta["history"]),
        feature_names=tuple(meta["feature_names"]),
        arrays={k[len("extra/"):]: v for k, v in arrays.items() if k.startswith("extra/")},
        meta=meta["extra"],
    )
