"""Multitask training with equal per-language sampling.

Every batch contains batch_size / L samples from each language (so
batch_size must divide evenly). The trunk runs once per batch; each
head sees only its own language's slice and per-sample losses are
normalized by the full batch size, which makes the trunk gradient of a
mixed batch the exact sum of its per-language contributions and keeps
foreign heads at exactly zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError
from ..nn.layers import backward_layers, collect_grads, forward_layers
from ..nn.losses import softmax_xent
from ..nn.optim import Adam, LrSchedule
from .network import Model


@dataclass
class TrainingLog:
    train_losses: list[float] = field(default_factory=list)
    dev_losses: list[float] = field(default_factory=list)
    lr_trace: list[float] = field(default_factory=list)


def _validate_sets(model: Model, train_set: dict, dev_set: dict) -> list[str]:
    langs = sorted(train_set)
    if not langs:
        raise ConfigError("empty training set")
    model_langs = set(model.languages)
    for lang in langs:
        if lang not in model_langs:
            raise ConfigError(f"training language {lang!r} has no head")
        if train_set[lang][0].shape[0] == 0:
            raise DataError(f"empty training split for {lang!r}")
    for lang in dev_set:
        if lang not in model_langs:
            raise ConfigError(f"dev language {lang!r} has no head")
    if sorted(dev_set) != langs:
        raise ConfigError("dev set must cover the same languages as the training set")
    return langs


def zero_head_grads(model: Model) -> None:
    for head in model.heads:
        head.dense.gW[...] = 0.0
        head.dense.gb[...] = 0.0


def train_step(model: Model, inputs: np.ndarray, labels: np.ndarray,
               slices: dict[str, slice]) -> float:
    """One forward/backward over a stitched multi-language batch.

    Populates trunk and head gradients (heads outside the batch get
    exact zeros) and returns the mean per-sample loss.
    """
    zero_head_grads(model)
    total = inputs.shape[0]
    hidden = forward_layers(model.trunk, inputs, training=True)
    grad_hidden = np.zeros_like(hidden)
    loss_sum = 0.0
    for lang, sl in slices.items():
        head = model.head_for(lang)
        logits = head.dense.forward(hidden[sl], training=True)
        loss, grad = softmax_xent(logits, labels[sl])
        n = sl.stop - sl.start
        loss_sum += loss * n
        grad_hidden[sl] = head.dense.backward(grad * (n / total))
    backward_layers(model.trunk, grad_hidden)
    return loss_sum / total


def iterate_batches(train_set: dict, batch_size: int, rng):
    """Stratified batches: shuffle each language once per epoch, then
    deal equal-sized chunks in sorted language order. Leftover samples
    that cannot fill a full chunk are dropped for that epoch."""
    langs = sorted(train_set)
    if batch_size % len(langs) != 0:
        raise ConfigError(
            f"batch size {batch_size} does not divide evenly over {len(langs)} languages"
        )
    per = batch_size // len(langs)
    perms = {lang: rng.permutation(train_set[lang][0].shape[0]) for lang in langs}
    n_batches = min(len(perms[lang]) // per for lang in langs)
    if n_batches == 0:
        raise DataError(
            f"no language has {per} samples to fill its share of a batch"
        )
    for b in range(n_batches):
        parts_x, parts_y, slices = [], [], {}
        start = 0
        for lang in langs:
            idx = perms[lang][b * per : (b + 1) * per]
            x, y = train_set[lang]
            parts_x.append(x[idx])
            parts_y.append(np.asarray(y)[idx])
            slices[lang] = slice(start, start + per)
            start += per
        yield np.concatenate(parts_x), np.concatenate(parts_y), slices


def dev_loss(model: Model, dev_set: dict, batch: int = 1024) -> float:
    """Unweighted mean of per-language cross-entropies, inference mode."""
    per_language = []
    for lang in sorted(dev_set):
        x, y = dev_set[lang]
        head = model.head_for(lang)
        total, count = 0.0, 0
        for start in range(0, x.shape[0], batch):
            xb, yb = x[start : start + batch], np.asarray(y)[start : start + batch]
            hidden = forward_layers(model.trunk, xb, training=False)
            logits = head.dense.forward(hidden, training=False)
            loss, _ = softmax_xent(logits, yb)
            total += loss * xb.shape[0]
            count += xb.shape[0]
        per_language.append(total / count)
    return float(np.mean(per_language))


def train(model: Model, train_set: dict, dev_set: dict, epochs: int = 50,
          batch_size: int = 255, lr: float = 1e-3, rng=None) -> TrainingLog:
    """Adam + dev-loss-driven LR halving; the returned model state is
    whatever the last epoch left behind (no early stopping)."""
    if rng is None:
        raise ConfigError("training needs an explicit random generator")
    _validate_sets(model, train_set, dev_set)
    params = model.params()
    opt = Adam(params, lr=lr)
    schedule = LrSchedule(lr=lr)
    log = TrainingLog()
    for _ in range(epochs):
        epoch_losses = []
        for inputs, labels, slices in iterate_batches(train_set, batch_size, rng):
            loss = train_step(model, inputs, labels, slices)
            epoch_losses.append(loss)
            opt.step(model.grads())
        d = dev_loss(model, dev_set)
        opt.lr = schedule.update(d)
        log.train_losses.append(float(np.mean(epoch_losses)))
        log.dev_losses.append(d)
        log.lr_trace.append(schedule.lr)
    return log
