"""Adam and the dev-loss-driven learning-rate halving schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


class Adam:
    """Standard Adam with bias correction. Parameters are updated in
    place so layers keep their array identities."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ConfigError(
                f"got {len(grads)} gradients for {len(self.params)} parameters"
            )
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)


@dataclass
class LrSchedule:
    """Halve the learning rate whenever dev loss increases over the
    previous epoch, never below the floor. Monotone non-increasing."""

    lr: float = 1e-3
    floor: float = 1e-4
    previous_dev_loss: float | None = None

    def update(self, dev_loss: float) -> float:
        if not np.isfinite(dev_loss):
            raise ConfigError(f"dev loss must be finite, got {dev_loss}")
        if self.previous_dev_loss is not None and dev_loss > self.previous_dev_loss:
            self.lr = max(self.lr / 2.0, self.floor)
        self.previous_dev_loss = dev_loss
        return self.lr
