"""CNN-LSTM network with a squared-hinge SVM head, plus its variants.

The default network reads a 30-wide PCA vector as a one-channel sequence:

    conv(32) -> relu -> maxpool(2) -> conv(64) -> relu -> maxpool(2)
    -> conv(64) -> relu -> dropout -> LSTM over the 7 positions -> linear head

``arch="cnn"`` replaces the LSTM by a mean over positions and ``arch="dense"``
is a plain multilayer perceptron; both reuse the same heads and losses.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import InvalidConfig, LabelOutOfRange, ShapeMismatch
from .tensor import Tensor

HEADS = ("svm_margin", "softmax_xent")
ARCHS = ("cnn_lstm", "cnn", "dense")
GATES = ("i", "f", "o", "g")


@dataclass(frozen=True)
class ConvBlock:
    filters: int
    kernel: int = 3
    padding: str = "same"


DEFAULT_BLOCKS = (ConvBlock(32, 3), ConvBlock(64, 3), ConvBlock(64, 3))


@dataclass(frozen=True)
class ModelConfig:
    input_length: int = 30
    conv_blocks: tuple[ConvBlock, ...] = DEFAULT_BLOCKS
    pool_width: int = 2
    dropout_rate: float = 0.3
    lstm_hidden: int = 64
    head: str = "svm_margin"
    n_classes: int = 15
    l2_head: float = 1e-4
    arch: str = "cnn_lstm"
    dense_layers: tuple[int, ...] = ()

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, ConvBlock) else ConvBlock(**b) for b in self.conv_blocks)
        object.__setattr__(self, "conv_blocks", blocks)
        object.__setattr__(self, "dense_layers", tuple(int(w) for w in self.dense_layers))

    def timeline(self) -> list[int]:
        """Sequence length after each conv block (pooling included)."""
        length = self.input_length
        out = []
        for i, block in enumerate(self.conv_blocks):
            if block.padding == "valid":
                length = length - block.kernel + 1
            if i < len(self.conv_blocks) - 1:
                length = length // self.pool_width
            out.append(length)
        return out

    @property
    def lstm_steps(self) -> int:
        return self.timeline()[-1] if self.arch == "cnn_lstm" else 0

    @property
    def feature_width(self) -> int:
        """Width of the vector the head sees."""
        if self.arch == "dense":
            return self.dense_layers[-1] if self.dense_layers else self.input_length
        if self.arch == "cnn":
            return self.conv_blocks[-1].filters
        return self.lstm_hidden

    def validate(self) -> "ModelConfig":
        def bad(reason):
            raise InvalidConfig(reason)

        if self.arch not in ARCHS:
            bad(f"unknown arch {self.arch!r}")
        if self.head not in HEADS:
            bad(f"unknown head {self.head!r}")
        if self.n_classes < 2:
            bad("n_classes must be at least 2")
        if self.input_length < 1:
            bad("input_length must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            bad("dropout_rate must be in [0, 1)")
        if self.l2_head < 0:
            bad("l2_head must be non-negative")
        if self.arch == "dense":
            if any(w < 1 for w in self.dense_layers):
                bad("dense layer widths must be positive")
            return self
        if not self.conv_blocks:
            bad("convolutional architectures need at least one conv block")
        if self.pool_width < 1:
            bad("pool_width must be positive")
        length = self.input_length
        for i, block in enumerate(self.conv_blocks):
            if block.padding not in ("same", "valid"):
                bad(f"block {i}: unknown padding {block.padding!r}")
            if block.filters < 1 or block.kernel < 1:
                bad(f"block {i}: filters and kernel must be positive")
            if block.kernel > length:
                bad(f"block {i}: kernel {block.kernel} exceeds sequence length {length}")
            if block.padding == "valid":
                length = length - block.kernel + 1
            if i < len(self.conv_blocks) - 1:
                if length < self.pool_width:
                    bad(f"block {i}: length {length} too short to pool by {self.pool_width}")
                length //= self.pool_width
        if self.arch == "cnn_lstm" and self.lstm_hidden < 1:
            bad("lstm_hidden must be positive")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [asdict(b) for b in self.conv_blocks]
        d["dense_layers"] = list(self.dense_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_blocks"] = tuple(ConvBlock(**b) for b in d.get("conv_blocks", ()))
        d["dense_layers"] = tuple(d.get("dense_layers", ()))
        return cls(**d)


@dataclass(eq=False)
class NetworkParams:
    """Trainable tensors of one network, keyed by stable names."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: Tensor(t.data.copy(), True) for k, t in self.tensors.items()})

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "NetworkParams":
        return cls(config, {k: Tensor(np.array(v, dtype=np.float64), True) for k, v in arrays.items()})

    def equals(self, other: "NetworkParams") -> bool:
        return (self.names == other.names
                and all(self[k].data.tobytes() == other[k].data.tobytes() for k in self.names))


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build(config: ModelConfig, seed: int = 0) -> NetworkParams:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1."""
    config.validate()
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    if config.arch == "dense":
        width = config.input_length
        for i, out in enumerate(config.dense_layers):
            p[f"dense{i}.weight"] = _glorot(rng, (width, out), width, out)
            p[f"dense{i}.bias"] = np.zeros(out)
            width = out
    else:
        channels = 1
        for i, block in enumerate(config.conv_blocks):
            k = block.kernel
            p[f"conv{i}.weight"] = _glorot(rng, (block.filters, channels, k), channels * k, block.filters * k)
            p[f"conv{i}.bias"] = np.zeros(block.filters)
            channels = block.filters
        if config.arch == "cnn_lstm":
            h = config.lstm_hidden
            for g in GATES:
                p[f"lstm.W_{g}"] = _glorot(rng, (channels, h), channels, h)
            for g in GATES:
                p[f"lstm.U_{g}"] = _glorot(rng, (h, h), h, h)
            for g in GATES:
                p[f"lstm.b_{g}"] = np.ones(h) if g == "f" else np.zeros(h)
    width = config.feature_width
    p["head.weight"] = _glorot(rng, (config.n_classes, width), width, config.n_classes)
    p["head.bias"] = np.zeros(config.n_classes)
    return NetworkParams.from_arrays(config, p)


def _as_batch(params: NetworkParams, batch) -> Tensor:
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 2 or x.shape[1] != params.config.input_length:
        raise ShapeMismatch("forward", x.shape, ("batch", params.config.input_length))
    return x


def _lstm_cell(z: Tensor, c_prev, hidden: int) -> tuple[Tensor, Tensor]:
    i = T.sigmoid(z[:, :hidden])
    f = T.sigmoid(z[:, hidden:2 * hidden])
    o = T.sigmoid(z[:, 2 * hidden:3 * hidden])
    g = T.tanh(z[:, 3 * hidden:])
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    h = T.mul(o, T.tanh(c))
    return h, c


def _lstm_weights(params: NetworkParams):
    W = T.concat([params[f"lstm.W_{g}"] for g in GATES], axis=1)
    U = T.concat([params[f"lstm.U_{g}"] for g in GATES], axis=1)
    b = T.concat([params[f"lstm.b_{g}"] for g in GATES], axis=0)
    return W, U, b


def lstm_step(params: NetworkParams, x_t, h_prev, c_prev) -> tuple[Tensor, Tensor]:
    """One LSTM update. Accepts single vectors or (batch, width) matrices."""
    hidden = params.config.lstm_hidden
    x_t, h_prev, c_prev = (v if isinstance(v, Tensor) else Tensor(v) for v in (x_t, h_prev, c_prev))
    single = x_t.data.ndim == 1
    if single:
        x_t, h_prev, c_prev = (T.reshape(v, (1, -1)) for v in (x_t, h_prev, c_prev))
    if h_prev.shape[-1] != hidden or c_prev.shape[-1] != hidden:
        raise ShapeMismatch("lstm_step", h_prev.shape, c_prev.shape, (hidden,))
    W, U, b = _lstm_weights(params)
    if x_t.shape[-1] != W.shape[0]:
        raise ShapeMismatch("lstm_step", x_t.shape, W.shape)
    z = T.add(T.add(T.matmul(x_t, W), T.matmul(h_prev, U)), b)
    h, c = _lstm_cell(z, c_prev, hidden)
    if single:
        h, c = T.reshape(h, (hidden,)), T.reshape(c, (hidden,))
    return h, c


def _run_lstm(params: NetworkParams, seq: Tensor) -> Tensor:
    """seq: (batch, steps, channels) -> final hidden state (batch, hidden)."""
    b, steps, channels = seq.shape
    hidden = params.config.lstm_hidden
    W, U, bias = _lstm_weights(params)
    # input projections for every step in one product
    xw = T.reshape(T.add(T.matmul(T.reshape(seq, (b * steps, channels)), W), bias), (b, steps, 4 * hidden))
    h = c = Tensor(np.zeros((b, hidden)))
    for t in range(steps):
        z = xw[:, t, :] if t == 0 else T.add(xw[:, t, :], T.matmul(h, U))
        h, c = _lstm_cell(z, c, hidden)
    return h


def features(params: NetworkParams, batch, train_mode: bool = False, seed: int = 0) -> Tensor:
    """Everything up to (not including) the head."""
    cfg = params.config
    x = _as_batch(params, batch)
    if cfg.arch == "dense":
        for i in range(len(cfg.dense_layers)):
            x = T.relu(T.add(T.matmul(x, params[f"dense{i}.weight"]), params[f"dense{i}.bias"]))
        return T.dropout(x, cfg.dropout_rate, train_mode, seed)
    x = T.reshape(x, (x.shape[0], 1, cfg.input_length))
    last = len(cfg.conv_blocks) - 1
    for i, block in enumerate(cfg.conv_blocks):
        x = T.relu(T.conv1d(x, params[f"conv{i}.weight"], params[f"conv{i}.bias"], block.padding))
        if i < last:
            x = T.maxpool1d(x, cfg.pool_width, cfg.pool_width)
    x = T.dropout(x, cfg.dropout_rate, train_mode, seed)
    if cfg.arch == "cnn":
        return T.reduce_mean(x, axis=2)
    return _run_lstm(params, T.transpose(x, (0, 2, 1)))


def head(params: NetworkParams, feats: Tensor) -> Tensor:
    return T.add(T.matmul(feats, T.transpose(params["head.weight"])), params["head.bias"])


def forward(params: NetworkParams, batch, train_mode: bool = False, seed: int = 0) -> Tensor:
    """Class scores, shape (batch, n_classes). Dropout only when ``train_mode``."""
    return head(params, features(params, batch, train_mode, seed))


def _one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or np.any(labels < 0) or np.any(labels >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _weighted_mean(per_sample: Tensor, weights) -> Tensor:
    if weights is None:
        return T.reduce_mean(per_sample)
    w = np.asarray(weights, dtype=np.float64)
    return T.mul(T.reduce_sum(T.mul(per_sample, w)), 1.0 / w.sum())


def margin_loss(scores: Tensor, labels, l2: float = 0.0, head_weights: Tensor | None = None,
                sample_weights=None) -> Tensor:
    """One-vs-rest squared hinge, averaged over batch and classes, plus L2 on the head.

    With targets t = +1 for the true class and -1 otherwise:
    ``mean(max(0, 1 - t * s) ** 2) + l2 * ||W||_F ** 2``.
    """
    n_classes = scores.shape[1]
    targets = 2.0 * _one_hot(labels, n_classes) - 1.0
    hinge = T.square(T.max_with_scalar(T.sub(1.0, T.mul(scores, targets)), 0.0))
    loss = _weighted_mean(T.reduce_mean(hinge, axis=1), sample_weights)
    if l2 and head_weights is not None:
        loss = T.add(loss, T.mul(T.reduce_sum(T.square(head_weights)), l2))
    return loss


def softmax_xent_loss(scores: Tensor, labels, sample_weights=None) -> Tensor:
    """Mean negative log-softmax of the true class, max-shifted for stability."""
    onehot = _one_hot(labels, scores.shape[1])
    shifted = T.sub(scores, scores.data.max(axis=1, keepdims=True))
    lse = T.log(T.reduce_sum(T.exp(shifted), axis=1))
    true = T.reduce_sum(T.mul(shifted, onehot), axis=1)
    return _weighted_mean(T.sub(lse, true), sample_weights)


def loss(params: NetworkParams, batch, labels, train_mode: bool = True, seed: int = 0,
         sample_weights=None) -> Tensor:
    """Forward pass plus the loss matching the configured head."""
    scores = forward(params, batch, train_mode, seed)
    if params.config.head == "svm_margin":
        return margin_loss(scores, labels, params.config.l2_head, params["head.weight"], sample_weights)
    return softmax_xent_loss(scores, labels, sample_weights)


def scores_to_labels(scores) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    return np.argmax(s, axis=1)


def predict_scores(params: NetworkParams, batch, chunk: int = 4096) -> np.ndarray:
    x = np.asarray(batch.data if isinstance(batch, Tensor) else batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.config.input_length:
        raise ShapeMismatch("predict", x.shape, ("batch", params.config.input_length))
    parts = [forward(params, x[i:i + chunk]).data for i in range(0, x.shape[0], chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, params.config.n_classes))


def predict(params: NetworkParams, batch, chunk: int = 4096) -> np.ndarray:
    return scores_to_labels(predict_scores(params, batch, chunk))


def extract_features(params: NetworkParams, batch, chunk: int = 4096) -> np.ndarray:
    """Frozen penultimate features (eval mode), e.g. for an offline kernel SVM."""
    x = np.asarray(batch, dtype=np.float64)
    parts = [features(params, x[i:i + chunk]).data for i in range(0, x.shape[0], chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, params.config.feature_width))


def proposed_config(n_classes: int, input_length: int = 30, **overrides) -> ModelConfig:
    return replace(ModelConfig(input_length=input_length, n_classes=n_classes), **overrides).validate()


def with_head(config: ModelConfig, head_name: str) -> ModelConfig:
    return replace(config, head=head_name).validate()


def parameter_count(params: NetworkParams) -> int:
    return int(sum(t.data.size for t in params.values()))


def tiny_config(n_classes: int = 2, input_length: int = 8, **overrides) -> ModelConfig:
    """Small network for tests and smoke runs."""
    base = ModelConfig(input_length=input_length, conv_blocks=(ConvBlock(3, 3), ConvBlock(4, 3), ConvBlock(4, 2)),
                       dropout_rate=0.0, lstm_hidden=5, n_classes=n_classes, l2_head=1e-3)
    return replace(base, **overrides).validate()


def block_summary(config: ModelConfig) -> Sequence[str]:
    lines = [f"input 1x{config.input_length}"]
    if config.arch == "dense":
        lines += [f"dense {w} relu" for w in config.dense_layers]
    else:
        for block, length in zip(config.conv_blocks, config.timeline()):
            lines.append(f"conv {block.filters}x{block.kernel} {block.padding} -> length {length}")
        if config.arch == "cnn_lstm":
            lines.append(f"lstm {config.lstm_hidden} over {config.lstm_steps} steps")
        else:
            lines.append("mean over positions")
    lines.append(f"head {config.head} -> {config.n_classes}")
    return lines
