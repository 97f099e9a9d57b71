"""Network baselines expressed as model configurations."""
from __future__ import annotations

from dataclasses import replace

from ..model import ModelConfig

DNN5_WIDTHS = (256, 128, 64, 32, 16)


def dnn5_config(n_classes: int, input_length: int = 30) -> ModelConfig:
    """Fully connected net with five hidden relu layers and a softmax head."""
    return ModelConfig(input_length=input_length, n_classes=n_classes, arch="dense",
                       dense_layers=DNN5_WIDTHS, conv_blocks=(), dropout_rate=0.0,
                       head="softmax_xent").validate()


def cnn_only_config(n_classes: int, input_length: int = 30, base: ModelConfig | None = None) -> ModelConfig:
    """The conv stack of the proposed model, mean-pooled over positions, softmax head."""
    base = base or ModelConfig(input_length=input_length, n_classes=n_classes)
    return replace(base, arch="cnn", head="softmax_xent").validate()


def cnn_lstm_softmax_config(n_classes: int, input_length: int = 30,
                            base: ModelConfig | None = None) -> ModelConfig:
    base = base or ModelConfig(input_length=input_length, n_classes=n_classes)
    return replace(base, head="softmax_xent").validate()


def model_config_for(tag: str, n_classes: int, input_length: int = 30,
                     base: ModelConfig | None = None) -> ModelConfig:
    """Config for a CLI model tag: proposed, cnn, cnn-lstm-softmax or dnn5."""
    base = base or ModelConfig(input_length=input_length, n_classes=n_classes)
    base = replace(base, input_length=input_length, n_classes=n_classes)
    if tag == "proposed":
        return replace(base, arch="cnn_lstm", head="svm_margin").validate()
    if tag == "cnn":
        return cnn_only_config(n_classes, input_length, base)
    if tag == "cnn-lstm-softmax":
        return cnn_lstm_softmax_config(n_classes, input_length, replace(base, arch="cnn_lstm"))
    if tag == "dnn5":
        return dnn5_config(n_classes, input_length)
    raise KeyError(tag)
