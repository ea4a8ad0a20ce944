"""Architecture builders for the feedforward and residual families."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..nn.layers import BatchNorm, Conv2d, Dense, Dropout, GlobalAvgPool, LayerNorm, ReLU
from .network import InputNorm, LanguageTaskHead, Model, ResidualBlock

# Default phone-state class counts per training language.
LANGUAGE_CLASS_COUNTS = {"FR": 124, "GE": 133, "PT": 145, "ES": 130, "RU": 151}

BOTTLENECK_DIM = 32


def _resolve_classes(languages, num_classes):
    if not languages:
        raise ConfigError("need at least one training language")
    if len(languages) > 5:
        raise ConfigError(f"at most 5 training languages supported, got {len(languages)}")
    if len(set(languages)) != len(languages):
        raise ConfigError("duplicate languages")
    counts = {}
    for lang in languages:
        if num_classes and lang in num_classes:
            counts[lang] = int(num_classes[lang])
        elif lang in LANGUAGE_CLASS_COUNTS:
            counts[lang] = LANGUAGE_CLASS_COUNTS[lang]
        else:
            raise ConfigError(f"no class count known for language {lang!r}")
    return counts


def ffn_hidden_layers(num_languages: int) -> int:
    # one extra shared 1024-layer at 3 languages and again at 5,
    # so capacity grows with the number of tasks
    return 3 + (num_languages >= 3) + (num_languages >= 5)


def build_ffn(languages, input_dim: int = 507, num_classes: dict | None = None,
              hidden_dim: int = 1024, dropout: float = 0.1, rng=None) -> Model:
    """Feedforward model: layer norm before every linear transform,
    ReLU + dropout after every linear except the bottleneck.

    Monolingual: 3 hidden layers before the bottleneck; 3 languages: 4;
    5 languages: 5. One more hidden layer follows the bottleneck, then
    a layer norm feeds the heads.
    """
    counts = _resolve_classes(languages, num_classes)
    rng = rng or np.random.default_rng(0)
    trunk: list = [InputNorm("vector", input_dim)]
    prev = input_dim
    for _ in range(ffn_hidden_layers(len(languages))):
        trunk += [LayerNorm(prev), Dense(prev, hidden_dim, rng=rng), ReLU(),
                  Dropout(dropout, rng=rng)]
        prev = hidden_dim
    trunk += [LayerNorm(prev), Dense(prev, BOTTLENECK_DIM, rng=rng)]
    bottleneck_index = len(trunk) - 1
    trunk += [LayerNorm(BOTTLENECK_DIM), Dense(BOTTLENECK_DIM, hidden_dim, rng=rng),
              ReLU(), Dropout(dropout, rng=rng), LayerNorm(hidden_dim)]
    heads = [
        LanguageTaskHead(lang, counts[lang], Dense(hidden_dim, counts[lang], rng=rng))
        for lang in languages
    ]
    return Model("ffn", "vector", trunk, bottleneck_index, heads)


def build_resnet(languages, num_classes: dict | None = None,
                 channels: tuple = (16, 32, 64, 128, 256),
                 image_height: int = 39, dropout: float = 0.05, rng=None) -> Model:
    """Residual model for single-channel context images.

    Stem 3x3 convolution into the first channel width, then one
    residual block per stage with stride 2 from the second stage on
    (channel widths double by default). Global average pooling yields a
    vector of the final width, which feeds the 32-unit bottleneck, a
    dense layer back to that width with ReLU, and the heads.
    """
    counts = _resolve_classes(languages, num_classes)
    if len(channels) < 2:
        raise ConfigError("need at least two channel stages")
    rng = rng or np.random.default_rng(0)
    trunk: list = [InputNorm("image", image_height)]
    trunk += [Conv2d(1, channels[0], 3, 1, rng=rng), BatchNorm(channels[0]), ReLU()]
    prev = channels[0]
    for i, ch in enumerate(channels):
        stride = 1 if i == 0 else 2
        trunk += [ResidualBlock(prev, ch, stride, rng=rng), Dropout(dropout, rng=rng)]
        prev = ch
    trunk += [GlobalAvgPool(), Dense(prev, BOTTLENECK_DIM, rng=rng)]
    bottleneck_index = len(trunk) - 1
    trunk += [Dense(BOTTLENECK_DIM, prev, rng=rng), ReLU()]
    heads = [
        LanguageTaskHead(lang, counts[lang], Dense(prev, counts[lang], rng=rng))
        for lang in languages
    ]
    return Model("resnet", "image", trunk, bottleneck_index, heads)
