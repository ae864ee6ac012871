"""Parameterized building blocks on top of the functional kernels.

A Module tracks its parameters in attribute-declaration order (which is
what the checkpoint format serializes), hands one shared RNG down the
construction path so a single seed fixes every weight, and stays
read-only during forward passes: parameter updates happen only through
the optimizer between steps.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .tensor import Tensor, linear, relu


def _walk(name, value):
    """Yield (dotted name, Tensor) pairs from Tensors, Modules, and
    arbitrarily nested lists/tuples of them, in declaration order."""
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        for sub, p in value.named_parameters():
            yield f"{name}.{sub}", p
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


class Module:
    """Base class with ordered parameter discovery."""

    def named_parameters(self, prefix=""):
        for name, value in self.__dict__.items():
            yield from _walk(prefix + name, value)

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _he_weights(rng, shape, fan_in, dtype):
    w = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
    return Tensor(w.astype(dtype), requires_grad=True)


def _bias(out_channels, init, dtype):
    if np.isscalar(init):
        b = np.full(out_channels, init, dtype=dtype)
    else:
        b = np.asarray(init, dtype=dtype).reshape(out_channels)
    return Tensor(b, requires_grad=True)


class Conv2d(Module):
    """Strided 2-D convolution layer with "same" padding by default."""

    def __init__(self, in_channels, out_channels, window, rng, stride=1, pad=None,
                 bias=True, dtype=np.float64, bias_init=0.0):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.window = window
        self.stride = stride
        self.pad = (window - 1) // 2 if pad is None else pad
        fan_in = in_channels * window * window
        self.weight = _he_weights(rng, (out_channels, in_channels, window, window), fan_in, dtype)
        self.bias = _bias(out_channels, bias_init, dtype) if bias else None

    def forward(self, x):
        return kernels.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Deconv2d(Module):
    """Stride-2 transposed convolution doubling the spatial dims."""

    def __init__(self, in_channels, out_channels, rng, window=4, bias=True, dtype=np.float64):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.window = window
        self.stride = 2
        self.pad = (window - 2) // 2
        fan_in = in_channels * window * window
        self.weight = _he_weights(rng, (in_channels, out_channels, window, window), fan_in, dtype)
        self.bias = _bias(out_channels, 0.0, dtype) if bias else None

    def forward(self, x):
        return kernels.deconv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True, dtype=np.float64, bias_init=0.0):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = _he_weights(rng, (out_features, in_features), in_features, dtype)
        self.bias = _bias(out_features, bias_init, dtype) if bias else None

    def forward(self, v):
        return linear(v, self.weight, self.bias)


class ResidualBlock(Module):
    """Two 3x3 convolutions with an identity shortcut; ReLU after the add."""

    def __init__(self, channels, rng, dtype=np.float64):
        self.conv1 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng, dtype=dtype)

    def forward(self, x):
        h = self.conv2(relu(self.conv1(x)))
        return relu(h + x)
