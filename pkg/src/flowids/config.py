"""Flat ``key = value`` run configuration shared by every command."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import model as M
from .errors import InvalidConfig
from .flow_ingest import DESTINATION_PORT
from .trainer import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    # shared
    seed: int = 0
    # preprocessing and split
    pca: int = 30
    test_fraction: float = 0.2
    val_fraction: float = 0.1       # carved from the training split for early stopping
    subsample: int = 0              # 0 keeps every row
    min_class_rows: int = 0
    drop_columns: str = DESTINATION_PORT  # comma-separated
    # network
    conv_filters: str = "32,64,64"
    conv_kernel: int = 3
    pool_width: int = 2
    dropout_rate: float = 0.3
    lstm_hidden: int = 64
    l2_head: float = 1e-4
    # training
    batch_size: int = 128
    epochs: int = 10
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 0
    shuffle: bool = True
    class_weights: bool = False
    grad_shards: int = 1
    workers: int = 1
    # classical baselines
    knn_k: int = 5
    rf_trees: int = 100
    rf_max_depth: int = 16

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_values(self, values: dict[str, object]) -> "RunConfig":
        """Copy with string or typed overrides; unknown keys are rejected."""
        types = {f.name: f.type for f in fields(self)}
        unknown = sorted(set(values) - set(types))
        if unknown:
            raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
        return replace(self, **{k: _coerce(k, v, types[k]) for k, v in values.items()})

    @property
    def drop_list(self) -> tuple[str, ...]:
        return tuple(c.strip() for c in self.drop_columns.split(",") if c.strip())

    def model_base(self, n_classes: int, input_length: int) -> M.ModelConfig:
        try:
            filters = [int(f) for f in self.conv_filters.split(",") if f.strip()]
        except ValueError:
            raise InvalidConfig(f"conv_filters must be integers, got {self.conv_filters!r}") from None
        blocks = tuple(M.ConvBlock(f, self.conv_kernel) for f in filters)
        return M.ModelConfig(input_length=input_length, conv_blocks=blocks, pool_width=self.pool_width,
                             dropout_rate=self.dropout_rate, lstm_hidden=self.lstm_hidden,
                             n_classes=n_classes, l2_head=self.l2_head)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names}).validate()

    def echo(self) -> list[str]:
        return [f"{k} = {_render(getattr(self, k))}" for k in self.keys()]


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, value, kind: str):
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError
            return low in _TRUE
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise InvalidConfig(f"{key}: cannot read {value!r} as {kind}") from None


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment line; later keys win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InvalidConfig(f"config line {lineno}: expected key = value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | Path | None, overrides: dict[str, object] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = cfg.with_values(parse_config_text(Path(path).read_text(encoding="utf-8")))
    return cfg.with_values({k: v for k, v in (overrides or {}).items() if v is not None})
