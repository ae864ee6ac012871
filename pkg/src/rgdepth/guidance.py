"""Guided-convolution variants and the repetitive guidance stage.

Three ways to filter a depth feature under image guidance, in descending
order of activation memory:

- DynamicGuidance: full per-pixel kernel bank predicted from the image
  feature (C*C*R^2 weights per pixel);
- FactorizedGuidance: per-pixel depthwise kernels plus one C x C
  cross-channel mix generated from the pooled image feature;
- EfficientGuidance: a pooled channel gate instead of depthwise kernels,
  keeping only the gated product (C*H*W) and the C x C mix.

RepetitiveGuidance chains a guidance unit k times, re-refining the image
feature before each repetition after the first, and fuses the k branch
outputs (last / add / concat / adaptive). AdaptiveFusion is the learned
convex combination with per-channel softmax weights.

Every unit records the element count of its guidance-specific
intermediates in last_guidance_elems, which the memcost module predicts
in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    depthwise_local_conv,
    dynamic_local_conv,
    global_avg_pool,
    softmax_branches,
)
from .layers import Conv2d, Linear, Module
from .tensor import Tensor, concat, matmul, narrow, reshape

FUSION_MODES = ("last", "add", "concat", "adaptive")

# Kernel/gate/mix generators start close to their neutral element (gate 1,
# mix identity, one-hot center-tap kernels): depth features are raw meters,
# and generator weights at full He scale would compound multiplicatively
# through every repetition.
GEN_INIT_SCALE = 0.01


class MemoryBudgetError(RuntimeError):
    pass


def _damp(*layers):
    for layer in layers:
        layer.weight.data = layer.weight.data * GEN_INIT_SCALE


@dataclass
class GuidanceStage:
    """Record of one fusion stage: inputs, branch outputs, fused result."""

    image_feature: np.ndarray
    depth_feature: np.ndarray
    branches: list
    fused: np.ndarray
    k: int


def _identity_kernel_bias(channels_out, channels_in, window, dtype):
    """Generator bias making the predicted kernels one-hot center taps."""
    bias = np.zeros((channels_out, channels_in, window, window), dtype=dtype)
    center = window // 2
    for o in range(min(channels_out, channels_in)):
        bias[o, o, center, center] = 1.0
    return bias.reshape(-1)


def _check_pair(img, dep, name):
    if img.shape != dep.shape:
        raise ValueError(f"{name}: image feature {img.shape} and depth feature {dep.shape} differ")


class DynamicGuidance(Module):
    """Full dynamic convolution: per-pixel C x C x R x R kernels.

    Deliberately memory-hungry; a configurable budget guards the kernel
    tensor allocation.
    """

    def __init__(self, channels, rng, window=3, dtype=np.float64, mem_budget_bytes=1 << 30):
        self.channels = channels
        self.window = window
        self.mem_budget_bytes = mem_budget_bytes
        bias = _identity_kernel_bias(channels, channels, window, dtype)
        self.gen = Conv2d(
            channels, channels * channels * window * window, 3, rng, dtype=dtype, bias_init=bias
        )
        _damp(self.gen)
        self.last_guidance_elems = 0

    def forward(self, img: Tensor, dep: Tensor) -> Tensor:
        _check_pair(img, dep, "dynamic_conv")
        c, h, w = dep.shape
        r = self.window
        need = c * c * r * r * h * w * dep.data.dtype.itemsize
        if need > self.mem_budget_bytes:
            raise MemoryBudgetError(
                f"dynamic convolution needs {need} bytes of kernel activations, "
                f"budget is {self.mem_budget_bytes}"
            )
        kernels = reshape(self.gen(img), (c, c, r, r, h, w))
        self.last_guidance_elems = kernels.size
        return dynamic_local_conv(dep, kernels, pad=(r - 1) // 2)


class FactorizedGuidance(Module):
    """Depthwise per-pixel kernels followed by a generated C x C mix."""

    def __init__(self, channels, rng, window=3, dtype=np.float64):
        self.channels = channels
        self.window = window
        bias = np.zeros((channels, window, window), dtype=dtype)
        bias[:, window // 2, window // 2] = 1.0
        self.gen = Conv2d(channels, channels * window * window, 3, rng, dtype=dtype, bias_init=bias.reshape(-1))
        self.mix = Linear(
            channels, channels * channels, rng, dtype=dtype, bias_init=np.eye(channels, dtype=dtype).reshape(-1)
        )
        _damp(self.gen, self.mix)
        self.last_guidance_elems = 0

    def forward(self, img: Tensor, dep: Tensor) -> Tensor:
        _check_pair(img, dep, "factorized_conv")
        c, h, w = dep.shape
        r = self.window
        kernels = reshape(self.gen(img), (c, r, r, h, w))
        stage1 = depthwise_local_conv(dep, kernels, pad=(r - 1) // 2)
        pooled = reshape(global_avg_pool(img), (c,))
        mix = reshape(self.mix(pooled), (c, c))
        self.last_guidance_elems = kernels.size + mix.size
        return reshape(matmul(mix, reshape(stage1, (c, h * w))), (c, h, w))


class EfficientGuidance(Module):
    """Channel-gate guidance unit.

    Concatenate image and depth features, reduce with a 3x3 convolution,
    pool to a C x 1 x 1 gate, multiply the depth feature by the gate,
    then apply a generated C x C cross-channel mix. The gate convolution
    bias starts at 1 and the mix bias at identity so the multiplicative
    path is alive at step 0.
    """

    def __init__(self, channels, rng, window=3, dtype=np.float64):
        self.channels = channels
        self.window = window
        self.gate = Conv2d(2 * channels, channels, window, rng, dtype=dtype, bias_init=1.0)
        self.mix = Linear(
            channels, channels * channels, rng, dtype=dtype, bias_init=np.eye(channels, dtype=dtype).reshape(-1)
        )
        _damp(self.gate, self.mix)
        self.last_guidance_elems = 0

    def forward(self, img: Tensor, dep: Tensor) -> Tensor:
        _check_pair(img, dep, "efficient_guidance")
        c, h, w = dep.shape
        gate = global_avg_pool(self.gate(concat([img, dep], axis=0)))
        gated = dep * gate
        pooled = reshape(global_avg_pool(img), (c,))
        mix = reshape(self.mix(pooled), (c, c))
        self.last_guidance_elems = gated.size + mix.size
        return reshape(matmul(mix, reshape(gated, (c, h * w))), (c, h, w))


class AdaptiveFusion(Module):
    """Convex combination of k branches with learned per-channel weights.

    Weights come from concat -> 3x3 conv -> global average pool -> linear
    map to (k, C) logits -> softmax over branches, so they sum to 1 per
    channel and the fused output stays inside the branch hull.
    """

    def __init__(self, channels, k, rng, dtype=np.float64):
        if k < 1:
            raise ValueError("adaptive fusion needs k >= 1")
        self.channels = channels
        self.k = k
        self.reduce = Conv2d(k * channels, channels, 3, rng, dtype=dtype)
        self.head = Linear(channels, k * channels, rng, dtype=dtype)
        _damp(self.head)
        self.last_alpha = None

    def forward(self, branches) -> Tensor:
        branches = list(branches)
        if len(branches) != self.k:
            raise ValueError(f"expected {self.k} branches, got {len(branches)}")
        shape = branches[0].shape
        for b in branches:
            if b.shape != shape:
                raise ValueError("adaptive fusion branches must share one shape")
        c = self.channels
        pooled = reshape(global_avg_pool(self.reduce(concat(branches, axis=0))), (c,))
        alpha = softmax_branches(reshape(self.head(pooled), (self.k, c)))
        self.last_alpha = alpha.data.copy()
        out = None
        for n, b in enumerate(branches):
            weight = reshape(narrow(alpha, 0, n, 1), (c, 1, 1))
            term = b * weight
            out = term if out is None else out + term
        return out


class RepetitiveGuidance(Module):
    """One fusion stage: k chained guidance units plus branch fusion.

    Repetition 1 guides the raw depth feature with the image feature;
    each later repetition re-refines the image feature with its own 3x3
    convolution and guides the previous branch output.
    """

    def __init__(self, channels, k, rng, mode="adaptive", unit="eg", window=3, dtype=np.float64,
                 mem_budget_bytes=1 << 30):
        if k < 1:
            raise ValueError("repetition count must be >= 1")
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}, expected one of {FUSION_MODES}")
        self.channels = channels
        self.k = k
        self.mode = mode
        self.unit_kind = unit
        self.units = [self._make_unit(unit, channels, rng, window, dtype, mem_budget_bytes) for _ in range(k)]
        self.refines = [Conv2d(channels, channels, 3, rng, dtype=dtype) for _ in range(k - 1)]
        if mode == "concat":
            self.squeeze = Conv2d(k * channels, channels, 1, rng, pad=0, dtype=dtype)
        elif mode == "adaptive":
            self.fuse = AdaptiveFusion(channels, k, rng, dtype=dtype)
        self.last_stage = None

    @staticmethod
    def _make_unit(kind, channels, rng, window, dtype, mem_budget_bytes):
        if kind == "eg":
            return EfficientGuidance(channels, rng, window=window, dtype=dtype)
        if kind == "cf":
            return FactorizedGuidance(channels, rng, window=window, dtype=dtype)
        if kind == "g1":
            return DynamicGuidance(channels, rng, window=window, dtype=dtype,
                                   mem_budget_bytes=mem_budget_bytes)
        raise ValueError(f"unknown guidance unit {kind!r}")

    def forward(self, img: Tensor, dep: Tensor) -> Tensor:
        _check_pair(img, dep, "repetitive_guidance")
        branches = [self.units[0](img, dep)]
        for n in range(1, self.k):
            refined = self.refines[n - 1](img)
            branches.append(self.units[n](refined, branches[-1]))

        if self.mode == "last":
            fused = branches[-1]
        elif self.mode == "add":
            fused = branches[0]
            for b in branches[1:]:
                fused = fused + b
        elif self.mode == "concat":
            fused = self.squeeze(concat(branches, axis=0))
        else:
            fused = self.fuse(branches)

        self.last_stage = GuidanceStage(
            image_feature=img.data,
            depth_feature=dep.data,
            branches=[b.data for b in branches],
            fused=fused.data,
            k=self.k,
        )
        return fused

    def guidance_elems(self) -> int:
        """Total guidance-specific activation elements of the stage."""
        return sum(u.last_guidance_elems for u in self.units)
