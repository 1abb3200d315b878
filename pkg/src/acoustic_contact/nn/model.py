"""The compact spectrogram CNN: three Conv-BN-ReLU blocks, global average
pooling and a linear classifier."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from . import layers as L

DEFAULT_CHANNELS = (16, 32, 64)


@dataclass(frozen=True)
class ModelSpec:
    n_classes: int = 10
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    in_channels: int = 1
    stride: int = 2

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2 (blank included), got {self.n_classes}")
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError(f"invalid channel ladder {self.channels}")

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "channels": list(self.channels),
            "in_channels": self.in_channels,
            "stride": self.stride,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(int(d["n_classes"]), tuple(d["channels"]), int(d["in_channels"]), int(d["stride"]))


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class Model:
    spec: ModelSpec
    convs: list[L.Conv2dLayer]
    norms: list[L.BatchNorm2dLayer]
    fc: L.LinearLayer
    dtype: np.dtype = field(default=np.dtype(np.float32))

    @classmethod
    def init(cls, spec: ModelSpec, seed: int = 0, dtype=np.float32) -> "Model":
        rng = np.random.default_rng(seed)
        convs, norms = [], []
        c_in = spec.in_channels
        for c_out in spec.channels:
            fan_in = c_in * L.KERNEL * L.KERNEL
            w = _kaiming_uniform(rng, (c_out, c_in, L.KERNEL, L.KERNEL), fan_in, dtype)
            convs.append(L.Conv2dLayer(w, np.zeros(c_out, dtype), stride=spec.stride, padding=1))
            norms.append(L.BatchNorm2dLayer.create(c_out, dtype))
            c_in = c_out
        fc_w = _kaiming_uniform(rng, (spec.n_classes, c_in), c_in, dtype)
        fc = L.LinearLayer(fc_w, np.zeros(spec.n_classes, dtype))
        return cls(spec, convs, norms, fc, np.dtype(dtype))

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name. Updating them in place updates the model."""
        params = {}
        for i, (conv, bn) in enumerate(zip(self.convs, self.norms)):
            params[f"block{i}.conv.weight"] = conv.weight
            params[f"block{i}.conv.bias"] = conv.bias
            params[f"block{i}.bn.gamma"] = bn.gamma
            params[f"block{i}.bn.beta"] = bn.beta
        params["fc.weight"] = self.fc.weight
        params["fc.bias"] = self.fc.bias
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, bn in enumerate(self.norms):
            out[f"block{i}.bn.running_mean"] = bn.running_mean
            out[f"block{i}.bn.running_var"] = bn.running_var
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = self.state()
        if set(own) != set(state):
            raise ShapeMismatch(f"state keys differ: {sorted(set(own) ^ set(state))}")
        for name, arr in own.items():
            if arr.shape != state[name].shape:
                raise ShapeMismatch(f"{name}: expected {arr.shape}, got {state[name].shape}")
            arr[...] = state[name]

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def forward(self, x: np.ndarray, mode: str = "eval"):
        """Logits for a batch ``(N, 1, n_mels, n_frames)``; returns ``(logits, cache)``."""
        if x.ndim == 3:
            x = x[:, None]
        x = np.asarray(x, dtype=self.dtype)
        caches = []
        h = x
        for conv, bn in zip(self.convs, self.norms):
            h, c_conv = L.conv2d_forward(h, conv)
            h, c_bn = L.batchnorm2d_forward(h, bn, mode)
            h, c_relu = L.relu_forward(h)
            caches.append((c_conv, c_bn, c_relu))
        h, c_pool = L.adaptive_avg_pool_forward(h)
        logits, c_fc = L.linear_forward(h, self.fc)
        return logits, (caches, c_pool, c_fc)

    def backward(self, dlogits: np.ndarray, cache) -> dict[str, np.ndarray]:
        caches, c_pool, c_fc = cache
        grads = {}
        dh, grads["fc.weight"], grads["fc.bias"] = L.linear_backward(dlogits, c_fc)
        dh = L.adaptive_avg_pool_backward(dh, c_pool)
        for i in reversed(range(len(caches))):
            c_conv, c_bn, c_relu = caches[i]
            dh = L.relu_backward(dh, c_relu)
            dh, grads[f"block{i}.bn.gamma"], grads[f"block{i}.bn.beta"] = L.batchnorm2d_backward(dh, c_bn)
            dh, grads[f"block{i}.conv.weight"], grads[f"block{i}.conv.bias"] = L.conv2d_backward(dh, c_conv)
        grads["input"] = dh
        return grads

    def predict_logits(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Eval-mode logits, batched; never mutates the model."""
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[:, None]
        out = [self.forward(x[i : i + batch_size], "eval")[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.spec.n_classes), self.dtype)
