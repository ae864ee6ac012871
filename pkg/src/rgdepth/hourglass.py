"""Stacked encoder-decoder hourglass feature extractor.

One unit is a symmetric J-level encoder-decoder built from residual
blocks. Units stack: unit i consumes the previous unit's full-resolution
decoder output as its input and the rest of the previous decoder as
per-level skip additions, so each pass re-refines the same multi-scale
pyramid. Channel schedule is base * 2^(j-1) per level, capped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Conv2d, Deconv2d, Module, ResidualBlock
from .tensor import Tensor, relu


@dataclass
class HourglassConfig:
    levels: int = 3
    base_channels: int = 8
    repetitions: int = 1
    encoder_depth: int = 1
    channel_cap: int = 64

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 levels")
        if self.base_channels < 1 or self.repetitions < 1 or self.encoder_depth < 0:
            raise ValueError("base_channels/repetitions must be >= 1, encoder_depth >= 0")

    def channels(self, level: int) -> int:
        return min(self.base_channels * 2 ** (level - 1), self.channel_cap)


@dataclass
class HourglassState:
    """Per-level activations of one unit: encoder[j-1] and decoder[j-1]."""

    encoder: list = field(default_factory=list)
    decoder: list = field(default_factory=list)


class HourglassUnit(Module):
    """One J-level encoder-decoder pass.

    Encoder level 1 is a 3x3 convolution of the unit input; deeper levels
    downsample by a stride-2 3x3 convolution, add the previous unit's
    decoder feature at that level when present, then run residual blocks.
    The decoder mirrors with stride-2 deconvolutions and skip additions
    from this unit's encoder. ReLU follows every convolution, applied
    after the addition where one exists.
    """

    def __init__(self, cfg: HourglassConfig, rng, dtype=np.float64):
        self.cfg = cfg
        ch = [cfg.channels(j) for j in range(1, cfg.levels + 1)]
        self.entry = Conv2d(ch[0], ch[0], 3, rng, dtype=dtype)
        self.entry_blocks = [ResidualBlock(ch[0], rng, dtype=dtype) for _ in range(cfg.encoder_depth)]
        self.downs = [
            Conv2d(ch[j - 1], ch[j], 3, rng, stride=2, dtype=dtype) for j in range(1, cfg.levels)
        ]
        self.blocks = [
            [ResidualBlock(ch[j], rng, dtype=dtype) for _ in range(cfg.encoder_depth)]
            for j in range(1, cfg.levels)
        ]
        self.mid = Conv2d(ch[-1], ch[-1], 3, rng, dtype=dtype)
        self.ups = [Deconv2d(ch[j], ch[j - 1], rng, dtype=dtype) for j in range(1, cfg.levels)]

    def forward(self, x: Tensor, prev: HourglassState | None = None, encoder_hook=None) -> HourglassState:
        cfg = self.cfg
        h, w = x.shape[1], x.shape[2]
        div = 2 ** (cfg.levels - 1)
        if h % div or w % div:
            raise ValueError(f"spatial dims {h}x{w} not divisible by {div}")
        if prev is not None and len(prev.decoder) != cfg.levels:
            raise ValueError("previous decoder state has the wrong number of levels")

        state = HourglassState()
        e = relu(self.entry(x))
        for block in self.entry_blocks:
            e = block(e)
        if encoder_hook is not None:
            e = encoder_hook(1, e)
        state.encoder.append(e)

        for j in range(2, cfg.levels + 1):
            z = self.downs[j - 2](e)
            if prev is not None:
                skip = prev.decoder[j - 1]
                if skip.shape != z.shape:
                    raise ValueError(
                        f"level {j} skip shape {skip.shape} does not match encoder shape {z.shape}"
                    )
                z = z + skip
            z = relu(z)
            for block in self.blocks[j - 2]:
                z = block(z)
            if encoder_hook is not None:
                z = encoder_hook(j, z)
            state.encoder.append(z)
            e = z

        d = relu(self.mid(state.encoder[-1]))
        state.decoder = [None] * cfg.levels
        state.decoder[-1] = d
        for j in range(cfg.levels - 1, 0, -1):
            d = relu(self.ups[j - 1](d) + state.encoder[j - 1])
            state.decoder[j - 1] = d
        return state


class HourglassStack(Module):
    """Repeated hourglass units with cross-unit skip connections."""

    def __init__(self, cfg: HourglassConfig, rng, dtype=np.float64):
        self.cfg = cfg
        self.units = [HourglassUnit(cfg, rng, dtype=dtype) for _ in range(cfg.repetitions)]

    def forward(self, x: Tensor) -> HourglassState:
        state = None
        for unit in self.units:
            state = unit(x if state is None else state.decoder[0], state)
        return state
