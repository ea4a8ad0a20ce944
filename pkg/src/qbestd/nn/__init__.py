"""Minimal neural primitives with exact analytic gradients.

Numpy-only layers (dense, layer norm, batch norm, 3x3/1x1 convolution,
ReLU, inverted dropout, global average pooling), softmax cross-entropy,
Adam, the dev-loss-driven LR halving schedule, a central-finite-difference
gradient checker, and a binary checkpoint format. No autodiff graph:
every layer implements its own backward pass, and the gradient checker
is the referee.
"""

from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool,
    Layer,
    LayerNorm,
    ReLU,
    backward_layers,
    collect_grads,
    collect_params,
    forward_layers,
)
from .losses import softmax_xent
from .optim import Adam, LrSchedule
from .gradcheck import (
    grad_check,
    max_relative_error,
    numerical_gradient,
    run_standard_suite,
)
from .checkpoint import load_layers, register_layer, save_layers

__all__ = [
    "Adam",
    "BatchNorm",
    "Conv2d",
    "Dense",
    "Dropout",
    "GlobalAvgPool",
    "Layer",
    "LayerNorm",
    "LrSchedule",
    "ReLU",
    "backward_layers",
    "collect_grads",
    "collect_params",
    "forward_layers",
    "grad_check",
    "load_layers",
    "max_relative_error",
    "numerical_gradient",
    "register_layer",
    "run_standard_suite",
    "save_layers",
    "softmax_xent",
]
