"""Model assembly: composite layers, the Model container, checkpoints.

A Model is a shared trunk (ordered layer list, one entry of which is
the 32-unit linear bottleneck) plus one dense classification head per
training language. Everything before the heads is shared; bottleneck
features are the trunk activations at the bottleneck layer, so heads
never run during extraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError
from ..frontend import FeatureMatrix, image_tensor
from ..nn.checkpoint import load_layers, register_layer, save_layers
from ..nn.layers import (
    BatchNorm,
    Conv2d,
    Dense,
    Layer,
    ReLU,
    forward_layers,
)


@register_layer("input_norm")
class InputNorm(Layer):
    """Fixed per-dimension standardization baked into the model.

    Carries the training-split mean/std as buffers so checkpoints are
    self-contained: extraction on new data needs no side files. Vector
    mode normalizes [batch x dim] columns; image mode normalizes the
    dim feature rows of [batch x 1 x dim x width] inputs (each row uses
    its own statistics across the whole width).
    """

    kind = "input_norm"

    def __init__(self, mode: str, dim: int):
        if mode not in ("vector", "image"):
            raise ConfigError(f"input norm mode must be vector or image, got {mode!r}")
        self.mode = mode
        self.dim = dim
        self.mean = np.zeros(dim, dtype=np.float32)
        self.std = np.ones(dim, dtype=np.float32)

    def set_stats(self, mean: np.ndarray, std: np.ndarray) -> None:
        mean = np.asarray(mean, dtype=np.float32)
        std = np.asarray(std, dtype=np.float32)
        if mean.shape != (self.dim,) or std.shape != (self.dim,):
            raise ConfigError(f"statistics must have shape ({self.dim},)")
        if np.any(std <= 0):
            raise ConfigError("standard deviations must be positive")
        self.mean[...] = mean
        self.std[...] = std

    def forward(self, x, training=False):
        if self.mode == "vector":
            if x.ndim != 2 or x.shape[1] != self.dim:
                raise DataError(f"input norm expects [batch x {self.dim}], got {x.shape}")
            return (x - self.mean) / self.std
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.dim:
            raise DataError(f"input norm expects [batch x 1 x {self.dim} x W], got {x.shape}")
        return (x - self.mean[None, None, :, None]) / self.std[None, None, :, None]

    def backward(self, grad):
        if self.mode == "vector":
            return grad / self.std
        return grad / self.std[None, None, :, None]

    def buffers(self):
        return [self.mean, self.std]

    def config(self):
        return {"mode": self.mode, "dim": self.dim}


@register_layer("residual")
class ResidualBlock(Layer):
    """y = relu(f(x) + shortcut(x)) with f = conv3x3 -> bn -> relu ->
    conv3x3 -> bn. The shortcut is the identity unless channels or
    stride change, in which case it projects with a 1x1 convolution
    plus batch norm. The second convolution starts at zero so a fresh
    block computes relu(shortcut(x)).
    """

    kind = "residual"

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, rng=None):
        self.in_channels, self.out_channels, self.stride = in_channels, out_channels, stride
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride, rng=rng)
        self.bn1 = BatchNorm(out_channels)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_channels, out_channels, 3, 1, rng=rng)
        self.conv2.W[...] = 0.0
        self.bn2 = BatchNorm(out_channels)
        self.has_projection = in_channels != out_channels or stride != 1
        if self.has_projection:
            self.proj_conv = Conv2d(in_channels, out_channels, 1, stride, rng=rng)
            self.proj_bn = BatchNorm(out_channels)
        self.relu_out = ReLU()

    def _sublayers(self):
        main = [self.conv1, self.bn1, self.conv2, self.bn2]
        if self.has_projection:
            main += [self.proj_conv, self.proj_bn]
        return main

    def forward(self, x, training=False):
        h = self.conv1.forward(x, training)
        h = self.bn1.forward(h, training)
        h = self.relu1.forward(h, training)
        h = self.conv2.forward(h, training)
        h = self.bn2.forward(h, training)
        if self.has_projection:
            s = self.proj_bn.forward(self.proj_conv.forward(x, training), training)
        else:
            s = x
        return self.relu_out.forward(h + s, training)

    def backward(self, grad):
        grad = self.relu_out.backward(grad)
        gh = self.bn2.backward(grad)
        gh = self.conv2.backward(gh)
        gh = self.relu1.backward(gh)
        gh = self.bn1.backward(gh)
        gx = self.conv1.backward(gh)
        if self.has_projection:
            gx = gx + self.proj_conv.backward(self.proj_bn.backward(grad))
        else:
            gx = gx + grad
        return gx

    def params(self):
        return [p for l in self._sublayers() for p in l.params()]

    def grads(self):
        return [g for l in self._sublayers() for g in l.grads()]

    def buffers(self):
        return [b for l in self._sublayers() for b in l.buffers()]

    def state_tensors(self):
        return [t for l in self._sublayers() for t in l.state_tensors()]

    def config(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "stride": self.stride,
        }


@dataclass
class LanguageTaskHead:
    """Per-language classification head on top of the shared trunk."""

    language: str
    num_classes: int
    dense: Dense

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(
                f"head for {self.language!r} needs >= 2 classes, got {self.num_classes}"
            )


@dataclass
class Model:
    architecture: str
    input_kind: str
    trunk: list[Layer]
    bottleneck_index: int
    heads: list[LanguageTaskHead] = field(default_factory=list)

    def __post_init__(self):
        bottleneck = self.trunk[self.bottleneck_index]
        if not isinstance(bottleneck, Dense) or bottleneck.out_dim != 32:
            raise ConfigError("bottleneck must be a 32-unit dense layer")
        if len({h.language for h in self.heads}) != len(self.heads):
            raise ConfigError("duplicate language heads")

    @property
    def languages(self) -> list[str]:
        return [h.language for h in self.heads]

    def head_for(self, language: str) -> LanguageTaskHead:
        for h in self.heads:
            if h.language == language:
                return h
        raise ConfigError(f"no head for language {language!r}")

    def trainable_layers(self) -> list[Layer]:
        return self.trunk + [h.dense for h in self.heads]

    def params(self):
        return [p for l in self.trainable_layers() for p in l.params()]

    def grads(self):
        return [g for l in self.trainable_layers() for g in l.grads()]

    def input_norm(self) -> InputNorm:
        first = self.trunk[0]
        if not isinstance(first, InputNorm):
            raise ConfigError("model trunk does not start with input normalization")
        return first


def count_params(model: Model) -> tuple[list[tuple[str, int]], int]:
    """Itemized trainable-scalar counts, one entry per parameterized
    layer plus one per head, and the grand total."""
    items = []
    for i, layer in enumerate(model.trunk):
        n = sum(p.size for p in layer.params())
        if n:
            items.append((f"trunk[{i}] {layer.kind}", n))
    for head in model.heads:
        n = sum(p.size for p in head.dense.params())
        items.append((f"head {head.language}", n))
    return items, sum(n for _, n in items)


def extract_bottleneck(model: Model, feat: FeatureMatrix, batch: int = 512,
                       image_left: int = 12, image_right: int = 12) -> FeatureMatrix:
    """Bottleneck activations for every frame of an utterance, in
    inference mode. Output is [frames x 32]; heads are never evaluated.
    """
    stack = model.trunk[: model.bottleneck_index + 1]
    if model.input_kind == "vector":
        inputs = feat.data
    else:
        inputs = image_tensor(feat, image_left, image_right).astype(np.float32)
    outs = []
    for start in range(0, inputs.shape[0], batch):
        outs.append(forward_layers(stack, inputs[start : start + batch], training=False))
    return FeatureMatrix(feat.utterance_id, np.concatenate(outs, axis=0))


MANIFEST_SUFFIX = ".json"


def manifest_path(checkpoint_path) -> str:
    return str(checkpoint_path) + MANIFEST_SUFFIX


def save_model(model: Model, path) -> None:
    """Checkpoint trunk + heads, plus a text manifest alongside."""
    layers = model.trunk + [h.dense for h in model.heads]
    save_layers(layers, path)
    manifest = {
        "architecture": model.architecture,
        "input_kind": model.input_kind,
        "trunk_layers": len(model.trunk),
        "bottleneck_index": model.bottleneck_index,
        "languages": model.languages,
        "num_classes": {h.language: h.num_classes for h in model.heads},
    }
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> Model:
    try:
        with open(manifest_path(path), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"missing model manifest {manifest_path(path)}")
    except json.JSONDecodeError as e:
        raise DataError(f"unreadable model manifest {manifest_path(path)}: {e}")
    layers = load_layers(path)
    n_trunk = manifest["trunk_layers"]
    languages = manifest["languages"]
    if len(layers) != n_trunk + len(languages):
        raise DataError(
            f"checkpoint {path} has {len(layers)} layers, manifest expects "
            f"{n_trunk} trunk + {len(languages)} heads"
        )
    heads = [
        LanguageTaskHead(lang, manifest["num_classes"][lang], dense)
        for lang, dense in zip(languages, layers[n_trunk:])
    ]
    return Model(
        architecture=manifest["architecture"],
        input_kind=manifest["input_kind"],
        trunk=layers[:n_trunk],
        bottleneck_index=manifest["bottleneck_index"],
        heads=heads,
    )
