"""Layers. Each owns its parameters and implements forward/backward.

Conventions shared by every layer:
  - forward(x, training) caches whatever backward needs; backward(grad)
    returns the input gradient and overwrites the parameter gradients.
    One backward per forward.
  - params()/grads() expose trainable arrays in a fixed order; buffers()
    exposes non-trainable state (running statistics). state_tensors()
    is params + buffers and defines checkpoint tensor order.
  - dtype is taken at construction (float32 for training, float64 for
    gradient checking); forward preserves the input dtype.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DataError
from .checkpoint import register_layer


class Layer:
    kind = ""

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def buffers(self) -> list[np.ndarray]:
        return []

    def state_tensors(self) -> list[np.ndarray]:
        return self.params() + self.buffers()

    def config(self) -> dict:
        return {}

    @classmethod
    def from_config(cls, config: dict) -> "Layer":
        return cls(**config)


def _init_uniform(rng, shape, fan_in, dtype):
    # fan-in scaled uniform; zeros when no generator is supplied
    # (checkpoint loading overwrites everything anyway)
    if rng is None:
        return np.zeros(shape, dtype=dtype)
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@register_layer("dense")
class Dense(Layer):
    """y = x @ W + b, x: [batch x in_dim]."""

    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, rng=None, dtype=np.float32):
        if in_dim < 1 or out_dim < 1:
            raise ConfigError(f"dense dims must be positive, got {in_dim}x{out_dim}")
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = _init_uniform(rng, (in_dim, out_dim), in_dim, dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DataError(f"dense expects [batch x {self.in_dim}], got {x.shape}")
        self._x = x
        return x @ self.W + self.b

    def backward(self, grad):
        self.gW = self._x.T @ grad
        self.gb = grad.sum(axis=0)
        return grad @ self.W.T

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]

    def config(self):
        return {"in_dim": self.in_dim, "out_dim": self.out_dim}


@register_layer("layernorm")
class LayerNorm(Layer):
    """Per-row normalization to zero mean / unit variance, then affine."""

    kind = "layernorm"
    EPS = 1e-5

    def __init__(self, dim: int, dtype=np.float32):
        if dim < 2:
            raise ConfigError(f"layer norm needs dim >= 2, got {dim}")
        self.dim = dim
        self.gain = np.ones(dim, dtype=dtype)
        self.bias = np.zeros(dim, dtype=dtype)
        self.g_gain = np.zeros_like(self.gain)
        self.g_bias = np.zeros_like(self.bias)
        self._cache = None

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DataError(f"layer norm expects [batch x {self.dim}], got {x.shape}")
        mu = x.mean(axis=1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return self.gain * xhat + self.bias

    def backward(self, grad):
        xhat, inv = self._cache
        n = self.dim
        self.g_gain = (grad * xhat).sum(axis=0)
        self.g_bias = grad.sum(axis=0)
        dxhat = grad * self.gain
        # dx = inv/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
        return (inv / n) * (
            n * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )

    def params(self):
        return [self.gain, self.bias]

    def grads(self):
        return [self.g_gain, self.g_bias]

    def config(self):
        return {"dim": self.dim}


@register_layer("batchnorm")
class BatchNorm(Layer):
    """Per-channel normalization over batch x H x W for image tensors.

    Training mode uses batch statistics (batch >= 2 required) and
    updates the running estimates with momentum 0.9; inference mode
    normalizes with the running estimates.
    """

    kind = "batchnorm"
    EPS = 1e-5

    def __init__(self, channels: int, momentum: float = 0.9, dtype=np.float32):
        if channels < 1:
            raise ConfigError(f"batch norm needs >= 1 channel, got {channels}")
        self.channels = channels
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.g_gamma = np.zeros_like(self.gamma)
        self.g_beta = np.zeros_like(self.beta)
        self._cache = None

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DataError(f"batch norm expects [B x {self.channels} x H x W], got {x.shape}")
        if training:
            if x.shape[0] < 2:
                raise DataError("batch norm in training mode needs batch >= 2")
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean = (
                self.momentum * self.running_mean + (1.0 - self.momentum) * mu
            ).astype(self.running_mean.dtype)
            self.running_var = (
                self.momentum * self.running_var + (1.0 - self.momentum) * var
            ).astype(self.running_var.dtype)
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
        self._cache = (xhat, inv, training, x.shape)
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, grad):
        xhat, inv, training, shape = self._cache
        self.g_gamma = (grad * xhat).sum(axis=(0, 2, 3))
        self.g_beta = grad.sum(axis=(0, 2, 3))
        dxhat = grad * self.gamma[None, :, None, None]
        if not training:
            return dxhat * inv[None, :, None, None]
        b, _, h, w = shape
        n = b * h * w
        sum_dxhat = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        return (inv[None, :, None, None] / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.g_gamma, self.g_beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def config(self):
        return {"channels": self.channels, "momentum": self.momentum}


@register_layer("conv3x3")
@register_layer("conv1x1")
class Conv2d(Layer):
    """Cross-correlation with 3x3 (padding 1) or 1x1 (padding 0) kernels.

    Stride 1 with a 3x3 kernel preserves H and W; stride 2 gives
    ceil(H/2) x ceil(W/2) for both kernel sizes.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, rng=None, dtype=np.float32):
        if kernel_size not in (1, 3):
            raise ConfigError(f"kernel size must be 1 or 3, got {kernel_size}")
        if stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {stride}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride = kernel_size, stride
        self.padding = 1 if kernel_size == 3 else 0
        fan_in = in_channels * kernel_size * kernel_size
        self.W = _init_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size),
                               fan_in, dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    @property
    def kind(self):
        return "conv3x3" if self.kernel_size == 3 else "conv1x1"

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DataError(
                f"conv expects [B x {self.in_channels} x H x W], got {x.shape}"
            )
        k, s, p = self.kernel_size, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        self._cache = (win, x.shape, xp.shape)
        out = np.einsum("bchwij,ocij->bohw", win, self.W, optimize=True)
        return out + self.b[None, :, None, None]

    def backward(self, grad):
        win, x_shape, xp_shape = self._cache
        k, s, p = self.kernel_size, self.stride, self.padding
        self.gb = grad.sum(axis=(0, 2, 3))
        self.gW = np.einsum("bohw,bchwij->ocij", grad, win, optimize=True)
        oh, ow = grad.shape[2], grad.shape[3]
        gxp = np.zeros((x_shape[0], self.in_channels, xp_shape[2], xp_shape[3]),
                       dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += np.einsum(
                    "bohw,oc->bchw", grad, self.W[:, :, i, j], optimize=True
                )
        if p:
            return gxp[:, :, p:-p, p:-p]
        return gxp

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]

    def config(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
        }


@register_layer("relu")
class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._mask = None

    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


@register_layer("dropout")
class Dropout(Layer):
    """Inverted dropout: training scales kept units by 1/(1-rate) so
    inference is the identity with no rescaling."""

    kind = "dropout"

    def __init__(self, rate: float, rng=None):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if self.rng is None:
            raise ConfigError("dropout in training mode needs a random generator")
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask

    def config(self):
        return {"rate": self.rate}


@register_layer("global_avg_pool")
class GlobalAvgPool(Layer):
    """[B x C x H x W] -> [B x C], averaging over all spatial positions."""

    kind = "global_avg_pool"

    def __init__(self):
        self._hw = None

    def forward(self, x, training=False):
        if x.ndim != 4:
            raise DataError(f"global average pool expects 4-D input, got {x.shape}")
        self._hw = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        h, w = self._hw
        out_shape = grad.shape + (h, w)
        return np.broadcast_to(grad[:, :, None, None], out_shape).copy() / (h * w)


def forward_layers(layers, x, training=False):
    for layer in layers:
        x = layer.forward(x, training)
    return x


def backward_layers(layers, grad):
    for layer in reversed(layers):
        grad = layer.backward(grad)
    return grad


def collect_params(layers):
    return [p for layer in layers for p in layer.params()]


def collect_grads(layers):
    return [g for layer in layers for g in layer.grads()]
