"""Network building blocks on top of the autodiff tape.

Layers hold named :class:`Parameter` leaves; a forward call records onto
whatever tape the caller watched the parameters on. Weight matrices start
Glorot-uniform, biases start at zero.
"""
from __future__ import annotations

import numpy as np

from .autodiff import (
    NumericError,
    Tensor,
    add,
    conv2d,
    matmul,
    mul,
    reduce_mean,
    relu,
    reshape,
    sigmoid,
    sine,
    sub,
)
from .rng import Rng

_ACTIVATIONS = {None: None, "relu": relu, "sigmoid": sigmoid, "sine": sine}


class Parameter(Tensor):
    """Trainable leaf; the optimizer replaces ``data`` between steps."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data)
        self.name = name


def glorot_uniform(rng: Rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init on [-limit, limit] with limit = sqrt(6 / (fan_in + fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"fans must be positive, got ({fan_in}, {fan_out})")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(size=shape, low=-limit, high=limit)


def _resolve_activation(name):
    if name not in _ACTIVATIONS:
        raise ValueError(f"unknown activation '{name}'; supported: {sorted(k for k in _ACTIVATIONS if k)}")
    return _ACTIVATIONS[name]


class Dense:
    def __init__(self, n_in: int, n_out: int, activation=None, *, rng: Rng, name: str = "dense"):
        self.activation = activation
        self._act = _resolve_activation(activation)
        self.weight = Parameter(glorot_uniform(rng, (n_in, n_out), n_in, n_out), f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        y = add(matmul(x, self.weight), self.bias)
        return self._act(y) if self._act else y

    def parameters(self):
        return [self.weight, self.bias]


class Conv2D:
    """3x3-style same-padding convolution layer, NCHW layout."""

    def __init__(self, c_in: int, c_out: int, ksize: int, activation=None, *, rng: Rng, name: str = "conv"):
        self.activation = activation
        self._act = _resolve_activation(activation)
        fan_in = c_in * ksize * ksize
        fan_out = c_out * ksize * ksize
        self.kernel = Parameter(
            glorot_uniform(rng, (c_out, c_in, ksize, ksize), fan_in, fan_out), f"{name}.kernel"
        )
        self.bias = Parameter(np.zeros((c_out, 1, 1)), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        y = add(conv2d(x, self.kernel), self.bias)
        return self._act(y) if self._act else y

    def parameters(self):
        return [self.kernel, self.bias]


class ChannelNorm:
    """Per-channel standardization with running statistics (momentum 0.9).

    Deliberate simplification of batch normalization: statistics are applied
    as constants, so no gradient flows through them. In training mode each
    call updates the running buffers from the batch and normalizes with the
    batch statistics; in eval mode the stored buffers are used.
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        if x.rank != 4 or x.shape[1] != self.channels:
            raise ValueError(f"channel norm over {self.channels} channels got input {x.shape}")
        if self.training:
            mean = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mean
            self.running_var = m * self.running_var + (1.0 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        return mul(sub(x, mean.reshape(1, -1, 1, 1)), inv.reshape(1, -1, 1, 1))

    def parameters(self):
        return []


class Flatten:
    def __call__(self, x: Tensor) -> Tensor:
        return reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))

    def parameters(self):
        return []


class Chain:
    """Minimal sequential container."""

    def __init__(self, layers):
        self.layers = list(layers)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def train(self, mode: bool = True):
        for layer in self.layers:
            if hasattr(layer, "training"):
                layer.training = mode
        return self


def parameter_count(params) -> int:
    return int(sum(p.data.size for p in params))


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"decay rates must lie in [0, 1), got ({beta1}, {beta2})")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: dict):
        """Apply one update from a tape gradient map (node id -> Tensor)."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.node is None or p.node.nid not in grads:
                name = getattr(p, "name", "<unnamed>")
                raise ValueError(f"missing gradient for parameter '{name}'")
            g = grads[p.node.nid].data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mse_loss(pred: Tensor, target) -> Tensor:
    d = sub(pred, target)
    return reduce_mean(mul(d, d))


def iterate_minibatches(n: int, batch_size: int, rng: Rng):
    """Yield shuffled index arrays covering range(n); last batch may be short."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def check_finite_loss(value: float, context: str):
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss during {context}")
