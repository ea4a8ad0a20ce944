"""Finite-difference gradient checker.

The referee for every backward pass: perturb each element of an array
by +-eps (central differences), rebuild the scalar loss, and compare
with the analytic gradient. Run at 64-bit with eps=1e-5; relative
errors below 1e-6 certify the analytic code.
"""

from __future__ import annotations

import numpy as np


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(1, ||a||, ||b||).

    The unit floor keeps the measure meaningful when the true gradient
    is exactly zero (a constant conv bias feeding a batch norm, say):
    there both sides are numerical noise and a pure ratio would always
    read as total disagreement.
    """
    num = float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))
    den = max(1.0, float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    return num / den


def numerical_gradient(loss_fn, array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of loss_fn() w.r.t. array, which is
    perturbed in place and restored. Use float64 arrays."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def grad_check(layer, x: np.ndarray, rng, eps: float = 1e-5,
               training: bool = True, reset=None) -> float:
    """Max relative error over the input gradient and every parameter
    gradient of one layer.

    The scalar loss is sum(forward(x) * r) for a fixed random
    projection r, so the analytic input gradient is backward(r).
    `reset`, if given, runs before every forward call; use it to pin
    down stochastic layers.
    """
    x = np.asarray(x, dtype=np.float64)

    def run_forward():
        if reset is not None:
            reset()
        return layer.forward(x, training=training)

    r = rng.normal(size=run_forward().shape)

    def loss_fn():
        return float(np.sum(run_forward() * r))

    run_forward()
    grad_in = layer.backward(r)
    analytic = [grad_in] + list(layer.grads())
    arrays = [x] + list(layer.params())
    worst = 0.0
    for target, got in zip(arrays, analytic):
        want = numerical_gradient(loss_fn, target, eps)
        worst = max(worst, max_relative_error(got, want))
    return worst


def run_standard_suite(seed: int = 20240, eps: float = 1e-5):
    """Gradient-check every layer kind over 22 random configurations at
    64-bit. Returns [(description, max relative error)]; all entries
    must come in below 1e-6 for the analytic gradients to pass.
    """
    from .layers import (
        BatchNorm,
        Conv2d,
        Dense,
        Dropout,
        GlobalAvgPool,
        LayerNorm,
        ReLU,
    )

    rng = np.random.default_rng(seed)
    f64 = np.float64
    results = []

    def check(name, layer, x, reset=None):
        err = grad_check(layer, x, rng, eps=eps, training=True, reset=reset)
        results.append((name, err))

    for b, i, o in [(4, 7, 5), (2, 3, 2), (6, 10, 8), (1, 5, 4)]:
        check(f"dense {b}x{i}->{o}",
              Dense(i, o, rng=rng, dtype=f64), rng.normal(size=(b, i)))

    for b, d in [(3, 5), (2, 12), (4, 32)]:
        check(f"layernorm {b}x{d}", LayerNorm(d, dtype=f64), rng.normal(size=(b, d)))

    for b, c, h, w in [(2, 3, 4, 5), (3, 5, 2, 2), (4, 2, 3, 3)]:
        check(f"batchnorm {b}x{c}x{h}x{w}",
              BatchNorm(c, dtype=f64), rng.normal(size=(b, c, h, w)))

    for b, ci, co, h, w, s in [(2, 3, 4, 5, 5, 1), (2, 2, 3, 6, 5, 2),
                               (1, 4, 2, 4, 4, 1), (3, 1, 2, 5, 6, 2)]:
        check(f"conv3x3 {ci}->{co} stride {s}",
              Conv2d(ci, co, 3, s, rng=rng, dtype=f64),
              rng.normal(size=(b, ci, h, w)))

    for b, ci, co, h, w, s in [(2, 4, 6, 5, 5, 1), (2, 3, 5, 6, 4, 2)]:
        check(f"conv1x1 {ci}->{co} stride {s}",
              Conv2d(ci, co, 1, s, rng=rng, dtype=f64),
              rng.normal(size=(b, ci, h, w)))

    for b, d in [(3, 8), (5, 4)]:
        # keep inputs away from the ReLU kink so central differences
        # stay on one side of it
        x = rng.normal(size=(b, d))
        x += np.sign(x) * 0.1
        check(f"relu {b}x{d}", ReLU(), x)

    for b, d, rate in [(4, 10, 0.3), (3, 6, 0.5)]:
        layer = Dropout(rate, rng=np.random.default_rng(99))

        def reset(layer=layer):
            layer.rng = np.random.default_rng(99)

        check(f"dropout rate {rate}", layer, rng.normal(size=(b, d)), reset=reset)

    for b, c, h, w in [(2, 3, 4, 5), (3, 2, 2, 6)]:
        check(f"global_avg_pool {b}x{c}x{h}x{w}",
              GlobalAvgPool(), rng.normal(size=(b, c, h, w)))

    return results
