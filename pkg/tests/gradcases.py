"""Finite-difference gradient cases, one generator per layer type.

Each case draws a random shape and parameters from ``rng``, runs the layer's
analytic backward pass and returns the max relative error against central
differences for every input it differentiates.
"""

import numpy as np

from acoustic_contact.nn import layers as L
from acoustic_contact.nn.gradcheck import max_relative_error, numeric_gradient

H_STEP = 1e-3
TOL = 1e-4


def _probe(forward, out_shape, rng):
    """Scalar objective sum(r * forward()) for a fixed random r."""
    r = rng.normal(size=out_shape)
    return r, lambda: float(np.sum(r * forward()))


def conv_case(rng):
    N, C, F = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    H, W = rng.integers(1, 7), rng.integers(1, 7)
    stride = int(rng.integers(1, 3))
    x = rng.normal(size=(N, C, H, W))
    layer = L.Conv2dLayer(rng.normal(size=(F, C, 3, 3)), rng.normal(size=F), stride=stride)
    out, cache = L.conv2d_forward(x, layer)
    r, f = _probe(lambda: L.conv2d_forward(x, layer)[0], out.shape, rng)
    dx, dw, db = L.conv2d_backward(r, cache)
    return [
        max_relative_error(dx, numeric_gradient(f, x, H_STEP)),
        max_relative_error(dw, numeric_gradient(f, layer.weight, H_STEP)),
        max_relative_error(db, numeric_gradient(f, layer.bias, H_STEP)),
    ]


def bn_case(rng, mode="train"):
    N, C = rng.integers(2, 4), rng.integers(1, 4)
    H, W = rng.integers(1, 5), rng.integers(1, 5)
    x = rng.normal(loc=rng.normal(), scale=rng.uniform(0.5, 3), size=(N, C, H, W))
    layer = L.BatchNorm2dLayer.create(C, np.float64)
    layer.gamma[:] = rng.normal(size=C)
    layer.beta[:] = rng.normal(size=C)
    layer.running_mean[:] = rng.normal(size=C)
    layer.running_var[:] = rng.uniform(0.5, 2, size=C)
    out, cache = L.batchnorm2d_forward(x, layer, mode)
    r, f = _probe(lambda: L.batchnorm2d_forward(x, layer, mode)[0], out.shape, rng)
    dx, dg, db = L.batchnorm2d_backward(r, cache)
    return [
        max_relative_error(dx, numeric_gradient(f, x, H_STEP)),
        max_relative_error(dg, numeric_gradient(f, layer.gamma, H_STEP)),
        max_relative_error(db, numeric_gradient(f, layer.beta, H_STEP)),
    ]


def relu_case(rng):
    x = rng.normal(size=tuple(rng.integers(1, 5, size=4)))
    x[np.abs(x) < 1e-2] = 0.5  # stay away from the kink
    out, mask = L.relu_forward(x)
    r, f = _probe(lambda: L.relu_forward(x)[0], out.shape, rng)
    return [max_relative_error(L.relu_backward(r, mask), numeric_gradient(f, x, H_STEP))]


def pool_case(rng):
    x = rng.normal(size=tuple(rng.integers(1, 5, size=4)))
    out, shape = L.adaptive_avg_pool_forward(x)
    r, f = _probe(lambda: L.adaptive_avg_pool_forward(x)[0], out.shape, rng)
    return [max_relative_error(L.adaptive_avg_pool_backward(r, shape), numeric_gradient(f, x, H_STEP))]


def linear_case(rng):
    N, D, K = rng.integers(1, 5), rng.integers(1, 9), rng.integers(2, 6)
    x = rng.normal(size=(N, D, 1, 1))
    layer = L.LinearLayer(rng.normal(size=(K, D)), rng.normal(size=K))
    out, cache = L.linear_forward(x, layer)
    r, f = _probe(lambda: L.linear_forward(x, layer)[0], out.shape, rng)
    dx, dw, db = L.linear_backward(r, cache)
    return [
        max_relative_error(dx, numeric_gradient(f, x, H_STEP)),
        max_relative_error(dw, numeric_gradient(f, layer.weight, H_STEP)),
        max_relative_error(db, numeric_gradient(f, layer.bias, H_STEP)),
    ]


def ce_case(rng):
    N, K = rng.integers(1, 6), rng.integers(2, 11)
    logits = rng.normal(scale=3, size=(N, K))
    labels = rng.integers(0, K, size=N)
    _, grad = L.softmax_cross_entropy(logits, labels)
    f = lambda: L.softmax_cross_entropy(logits, labels)[0]
    return [max_relative_error(grad, numeric_gradient(f, logits, H_STEP))]


GRAD_CASES = {
    "conv": conv_case,
    "batchnorm_train": bn_case,
    "batchnorm_eval": lambda rng: bn_case(rng, "eval"),
    "relu": relu_case,
    "pool": pool_case,
    "linear": linear_case,
    "cross_entropy": ce_case,
}
