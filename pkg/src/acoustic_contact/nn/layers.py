"""Forward/backward kernels for the layer types used by the classifier.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes ``(dout, cache)``. Arrays follow the NCHW convention. Arithmetic runs
in the dtype of the inputs, so float64 parameters give oracle-grade gradients
and float32 is used for production training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LabelOutOfRange, ShapeMismatch

KERNEL = 3


@dataclass
class Conv2dLayer:
    weight: np.ndarray  # (C_out, C_in, 3, 3)
    bias: np.ndarray  # (C_out,)
    stride: int = 2
    padding: int = 1

    def __post_init__(self) -> None:
        if self.weight.ndim != 4 or self.weight.shape[2:] != (KERNEL, KERNEL):
            raise ShapeMismatch(f"conv weight must be (C_out, C_in, 3, 3), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch(f"conv bias must be ({self.weight.shape[0]},), got {self.bias.shape}")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


@dataclass
class BatchNorm2dLayer:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "BatchNorm2dLayer":
        return cls(
            np.ones(channels, dtype),
            np.zeros(channels, dtype),
            np.zeros(channels, dtype),
            np.ones(channels, dtype),
        )


@dataclass
class LinearLayer:
    weight: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)


def conv_output_size(n: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - KERNEL) // stride + 1


def conv2d_forward(x: np.ndarray, layer: Conv2dLayer):
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise ShapeMismatch(f"conv expects (N, {layer.in_channels}, H, W), got {x.shape}")
    N, C, H, W = x.shape
    s, p = layer.stride, layer.padding
    Ho, Wo = conv_output_size(H, s, p), conv_output_size(W, s, p)
    if Ho < 1 or Wo < 1:
        raise ShapeMismatch(f"input {H}x{W} too small for 3x3 conv with padding {p}")
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    # (N, C, Ho, Wo, 3, 3) view -> (N*Ho*Wo, C*9) patch matrix
    patches = np.lib.stride_tricks.sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))
    patches = patches[:, :, : s * (Ho - 1) + 1 : s, : s * (Wo - 1) + 1 : s]
    cols = patches.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * KERNEL * KERNEL)
    w_flat = layer.weight.reshape(layer.out_channels, -1)
    out = cols @ w_flat.T + layer.bias
    out = out.reshape(N, Ho, Wo, -1).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, layer)


def conv2d_backward(dout: np.ndarray, cache):
    x_shape, cols, layer = cache
    N, C, H, W = x_shape
    s, p = layer.stride, layer.padding
    _, C_out, Ho, Wo = dout.shape
    d_flat = dout.transpose(0, 2, 3, 1).reshape(-1, C_out)
    dw = (d_flat.T @ cols).reshape(layer.weight.shape)
    db = d_flat.sum(axis=0)
    dcols = (d_flat @ layer.weight.reshape(C_out, -1)).reshape(N, Ho, Wo, C, KERNEL, KERNEL)
    dxp = np.zeros((N, C, H + 2 * p, W + 2 * p), dtype=dout.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += dcols[..., i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, p : p + H, p : p + W]
    return np.ascontiguousarray(dx), dw, db


def batchnorm2d_forward(x: np.ndarray, layer: BatchNorm2dLayer, mode: str = "train"):
    """Per-channel normalisation over (N, H, W).

    Train mode uses biased batch statistics and updates the running averages
    in place; eval mode uses the running averages and touches nothing.
    """
    if x.ndim != 4 or x.shape[1] != layer.gamma.shape[0]:
        raise ShapeMismatch(f"batchnorm expects (N, {layer.gamma.shape[0]}, H, W), got {x.shape}")
    g = layer.gamma.reshape(1, -1, 1, 1)
    b = layer.beta.reshape(1, -1, 1, 1)
    if mode == "train":
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = layer.momentum
        n = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * n / max(n - 1, 1)
        layer.running_mean[...] = (1 - m) * layer.running_mean + m * mu
        layer.running_var[...] = (1 - m) * layer.running_var + m * unbiased
    elif mode == "eval":
        mu, var = layer.running_mean, layer.running_var
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    xhat = (x - mu.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    out = g * xhat + b
    return out.astype(x.dtype, copy=False), (xhat, inv_std, layer, mode)


def batchnorm2d_backward(dout: np.ndarray, cache):
    xhat, inv_std, layer, mode = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    g = layer.gamma.reshape(1, -1, 1, 1)
    istd = inv_std.reshape(1, -1, 1, 1)
    dxhat = dout * g
    if mode == "eval":
        return dxhat * istd, dgamma, dbeta
    mean_dxhat = dxhat.mean(axis=(0, 2, 3), keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
    dx = istd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgamma, dbeta


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x > 0


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def adaptive_avg_pool_forward(x: np.ndarray):
    """Global average over H and W: (N, C, H, W) -> (N, C, 1, 1)."""
    return x.mean(axis=(2, 3), keepdims=True), x.shape


def adaptive_avg_pool_backward(dout: np.ndarray, x_shape) -> np.ndarray:
    H, W = x_shape[2], x_shape[3]
    return np.broadcast_to(dout / (H * W), x_shape).copy()


def linear_forward(x: np.ndarray, layer: LinearLayer):
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != layer.weight.shape[1]:
        raise ShapeMismatch(f"linear expects {layer.weight.shape[1]} features, got {x2.shape[1]}")
    return x2 @ layer.weight.T + layer.bias, (x.shape, x2, layer)


def linear_backward(dout: np.ndarray, cache):
    x_shape, x2, layer = cache
    dx = (dout @ layer.weight).reshape(x_shape)
    return dx, dout.T @ x2, dout.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels)
    N, K = logits.shape
    if labels.shape != (N,):
        raise ShapeMismatch(f"expected {N} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise LabelOutOfRange(f"labels must be in [0, {K}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    rows = np.arange(N)
    loss = -log_probs[rows, labels].mean()
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return float(loss), grad / N
