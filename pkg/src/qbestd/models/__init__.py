"""Model assembly, multitask training, and bottleneck extraction."""

from .builders import (
    BOTTLENECK_DIM,
    LANGUAGE_CLASS_COUNTS,
    build_ffn,
    build_resnet,
    ffn_hidden_layers,
)
from .network import (
    InputNorm,
    LanguageTaskHead,
    Model,
    ResidualBlock,
    count_params,
    extract_bottleneck,
    load_model,
    manifest_path,
    save_model,
)
from .training import (
    TrainingLog,
    dev_loss,
    iterate_batches,
    train,
    train_step,
    zero_head_grads,
)

__all__ = [
    "BOTTLENECK_DIM",
    "LANGUAGE_CLASS_COUNTS",
    "InputNorm",
    "LanguageTaskHead",
    "Model",
    "ResidualBlock",
    "TrainingLog",
    "build_ffn",
    "build_resnet",
    "count_params",
    "dev_loss",
    "extract_bottleneck",
    "ffn_hidden_layers",
    "iterate_batches",
    "load_model",
    "manifest_path",
    "save_model",
    "train",
    "train_step",
    "zero_head_grads",
]
