"""Minimal dense-tensor neural network kernel (numpy)."""

from .checkpoint import (
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .layers import (
    BatchNorm2dLayer,
    Conv2dLayer,
    LinearLayer,
    adaptive_avg_pool_backward,
    adaptive_avg_pool_forward,
    batchnorm2d_backward,
    batchnorm2d_forward,
    conv2d_backward,
    conv2d_forward,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
)
from .model import Model, ModelSpec
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "BatchNorm2dLayer",
    "Checkpoint",
    "Conv2dLayer",
    "LinearLayer",
    "Model",
    "ModelSpec",
    "adam_step",
    "adaptive_avg_pool_backward",
    "adaptive_avg_pool_forward",
    "batchnorm2d_backward",
    "batchnorm2d_forward",
    "conv2d_backward",
    "conv2d_forward",
    "decode_checkpoint",
    "encode_checkpoint",
    "linear_backward",
    "linear_forward",
    "load_checkpoint",
    "relu_backward",
    "relu_forward",
    "save_checkpoint",
    "softmax",
    "softmax_cross_entropy",
]
