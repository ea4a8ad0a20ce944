"""Softmax cross-entropy, the only training objective."""

from __future__ import annotations

import numpy as np

from ..errors import DataError


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log softmax probability and its logits gradient.

    Gradient is (softmax - onehot) / batch, so summing per-sample
    contributions reproduces the mean-loss gradient exactly.
    """
    if logits.ndim != 2:
        raise DataError(f"expected [batch x classes] logits, got {logits.shape}")
    labels = np.asarray(labels)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise DataError(f"expected {batch} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= classes:
        raise DataError(f"label out of range [0, {classes})")
    probs = softmax(logits)
    rows = np.arange(batch)
    loss = float(-np.log(np.maximum(probs[rows, labels], 1e-300)).mean())
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / batch
