"""Full completion network, masked regression loss, and checkpoints.

Two branches share one channel schedule. The image branch encodes the
color image with a 5x5 stem and runs the hourglass stack; the final
unit's decoder pyramid becomes the guidance features. The depth branch
(sparse depth concatenated with its validity mask, 5x5 stem, one
hourglass unit) applies a repetitive guidance stage at each configured
encoder level against the matching-resolution guidance feature, and its
full-resolution decoder output feeds a 3x3 head that emits dense depth
in meters.

Checkpoints are a flat named-tensor container: magic "RIG1", a JSON
config echo, float32 little-endian tensors in declaration order (name,
shape, data), and a trailing 64-bit checksum of everything after the
magic.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ChecksumError, fnv1a64
from .guidance import FUSION_MODES, RepetitiveGuidance
from .hourglass import HourglassConfig, HourglassStack, HourglassUnit
from .layers import Conv2d, Module
from .tensor import Tensor, concat, mul, relu, sub, sum_all

CKPT_MAGIC = b"RIG1"


@dataclass
class ModelConfig:
    hourglass: HourglassConfig = field(default_factory=HourglassConfig)
    rg_repetitions: int = 1
    fusion: str = "last"
    fusion_levels: tuple | None = None
    stem_window: int = 5
    guidance_unit: str = "eg"
    dtype: str = "float32"

    def __post_init__(self):
        if self.rg_repetitions < 1:
            raise ValueError("rg_repetitions must be >= 1")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        if self.fusion_levels is None:
            self.fusion_levels = tuple(range(1, min(4, self.hourglass.levels - 1) + 1))
        else:
            self.fusion_levels = tuple(self.fusion_levels)
        for j in self.fusion_levels:
            if not 1 <= j <= self.hourglass.levels:
                raise ValueError(f"fusion level {j} outside encoder levels 1..{self.hourglass.levels}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion_levels"] = list(self.fusion_levels)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["hourglass"] = HourglassConfig(**d["hourglass"])
        d["fusion_levels"] = tuple(d["fusion_levels"])
        return ModelConfig(**d)


def desk_default_config() -> ModelConfig:
    """Small configuration that trains in minutes on a CPU."""
    return ModelConfig(
        hourglass=HourglassConfig(levels=3, base_channels=8, repetitions=2),
        rg_repetitions=2,
        fusion="adaptive",
    )


class CompletionNet(Module):
    """Image-guided depth completion network."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        dtype = np.dtype(cfg.dtype)
        hg = cfg.hourglass
        ch1 = hg.channels(1)
        stem_pad = (cfg.stem_window - 1) // 2

        self.image_stem = Conv2d(3, ch1, cfg.stem_window, rng, pad=stem_pad, dtype=dtype)
        self.image_stack = HourglassStack(hg, rng, dtype=dtype)
        self.depth_stem = Conv2d(2, ch1, cfg.stem_window, rng, pad=stem_pad, dtype=dtype)
        self.depth_unit = HourglassUnit(hg, rng, dtype=dtype)
        self.rg_stages = [
            RepetitiveGuidance(
                hg.channels(j),
                cfg.rg_repetitions,
                rng,
                mode=cfg.fusion,
                unit=cfg.guidance_unit,
                dtype=dtype,
            )
            for j in cfg.fusion_levels
        ]
        self.head = Conv2d(ch1, 1, 3, rng, dtype=dtype)

    def forward(self, color, sparse, mask) -> Tensor:
        """Predict a dense (1, H, W) depth map in meters."""
        dtype = np.dtype(self.cfg.dtype)
        color = np.asarray(color, dtype=dtype)
        sparse = np.asarray(sparse, dtype=dtype)
        maskf = np.asarray(mask, dtype=dtype).reshape(sparse.shape)
        if color.ndim != 3 or color.shape[0] != 3:
            raise ValueError(f"color must be (3, H, W), got {color.shape}")
        if sparse.ndim != 3 or sparse.shape[0] != 1 or sparse.shape[1:] != color.shape[1:]:
            raise ValueError(f"sparse must be (1, H, W) aligned with color, got {sparse.shape}")

        guide = self.image_stack(relu(self.image_stem(Tensor(color))))

        stage_by_level = dict(zip(self.cfg.fusion_levels, self.rg_stages))

        def fuse(level, feature):
            stage = stage_by_level.get(level)
            if stage is None:
                return feature
            return stage(guide.decoder[level - 1], feature)

        depth_in = relu(self.depth_stem(concat([Tensor(sparse), Tensor(maskf)], axis=0)))
        state = self.depth_unit(depth_in, prev=None, encoder_hook=fuse)
        pred = self.head(state.decoder[0])
        if not np.isfinite(pred.data).all():
            raise FloatingPointError("non-finite values in prediction")
        return pred

    def predict(self, color, sparse, mask) -> np.ndarray:
        return self.forward(color, sparse, mask).data

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict) -> None:
        dtype = np.dtype(self.cfg.dtype)
        for name, p in self.named_parameters():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing parameter {name}")
            arr = np.asarray(arrays[name], dtype=dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != expected {p.data.shape}")
            p.data = arr.copy()


def build(cfg: ModelConfig, seed: int = 0) -> CompletionNet:
    return CompletionNet(cfg, seed=seed)


def masked_mse(pred: Tensor, gt, valid_mask) -> Tensor:
    """Mean squared error over the valid pixels only.

    The squared difference is multiplied by the 0/1 mask before the
    reduction, so both the value and the gradient are exactly untouched
    by anything at invalid pixels.
    """
    gt = np.asarray(gt, dtype=pred.data.dtype).reshape(pred.data.shape)
    maskf = np.asarray(valid_mask).reshape(pred.data.shape)
    m = int(np.count_nonzero(maskf))
    if m == 0:
        raise ValueError("empty valid mask: masked MSE is undefined")
    diff = mul(sub(pred, Tensor(gt)), Tensor(maskf.astype(pred.data.dtype)))
    return sum_all(mul(diff, diff)) * (1.0 / m)


# -- checkpoint container --------------------------------------------------


def save_checkpoint(path, config: dict, arrays: dict) -> None:
    """Write named float32 tensors with a config echo and checksum."""
    chunks = []
    cfg_blob = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(cfg_blob)))
    chunks.append(cfg_blob)
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        blob = np.ascontiguousarray(arr, dtype="<f4")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", blob.ndim))
        chunks.append(struct.pack(f"<{blob.ndim}I", *blob.shape) if blob.ndim else b"")
        chunks.append(blob.tobytes())
    payload = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(payload)
        fh.write(struct.pack("<Q", fnv1a64(payload)))


def load_checkpoint(path):
    """Read back (config dict, ordered name->float32 array mapping)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    payload = blob[4:-8]
    (stored,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    if fnv1a64(payload) != stored:
        raise ChecksumError(f"{path}: checkpoint checksum mismatch")
    off = 0
    (cfg_len,) = struct.unpack_from("<I", payload, off)
    off += 4
    config = json.loads(payload[off : off + cfg_len].decode("utf-8"))
    off += cfg_len
    (count,) = struct.unpack_from("<I", payload, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", payload, off)
        off += 4
        name = payload[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", payload, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", payload, off) if ndim else ()
        off += 4 * ndim
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(shape).copy()
        off += 4 * n
    return config, arrays
