"""Synthetic depth-completion scenes and bit-exact file formats.

Scenes are procedural: a tilted ground plane plus 3-8 boxes/spheres
rendered as an orthographic depth map, with a shaded-and-textured color
image on top. That keeps the statistics that matter for this task
(dense color, sparse depth input, semi-dense ground truth, depth
discontinuities at object boundaries) without any real sensor data.

Everything is deterministic in (seed, index). Arrays are float32 so the
.dmap round trip is bitwise exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DMAP_MAGIC = b"DMAP"
DMAP_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class DmapError(Exception):
    """Base error for .dmap parsing."""


class BadMagicError(DmapError):
    pass


class ChecksumError(DmapError):
    pass


class TruncatedError(DmapError):
    pass


def fnv1a64(payload: bytes) -> int:
    """64-bit FNV-1a hash; the step map is injective in each byte, so any
    single-byte corruption changes the digest."""
    h = _FNV_OFFSET
    for b in payload:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


# -- sample model --------------------------------------------------------


@dataclass
class Sample:
    color: np.ndarray        # (3, H, W) float32 in [0, 1]
    gt_depth: np.ndarray     # (1, H, W) float32 meters in (0, max_depth]
    gt_mask: np.ndarray      # (1, H, W) bool, semi-dense GT support
    sparse_depth: np.ndarray # (1, H, W) float32 meters, 0 where unsampled
    input_mask: np.ndarray   # (1, H, W) bool, sparse support

    def validate(self):
        h, w = self.gt_depth.shape[1:]
        assert self.color.shape == (3, h, w)
        assert self.gt_mask.shape == self.sparse_depth.shape == self.input_mask.shape == (1, h, w)
        assert (self.gt_depth > 0).all()
        # sparse support is a subset of GT support, with equal values there
        assert not np.any(self.input_mask & ~self.gt_mask)
        assert np.array_equal(self.sparse_depth[self.input_mask], self.gt_depth[self.input_mask])
        assert np.all(self.sparse_depth[~self.input_mask] == 0)


@dataclass
class DatasetSpec:
    count: int
    height: int = 64
    width: int = 64
    sample_rate: float = 0.05
    gt_density: float = 0.95
    max_depth: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.sample_rate <= 1:
            raise ValueError("sample_rate must be in (0, 1]")
        if not 0 < self.gt_density <= 1:
            raise ValueError("gt_density must be in (0, 1]")


def gen_scene(spec: DatasetSpec, index: int) -> Sample:
    """Render one procedural sample, deterministic in (spec.seed, index)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(index,)))
    h, w = spec.height, spec.width
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]

    # ground plane: near at the bottom row, far at the top
    near = 0.30 * spec.max_depth
    far = 0.95 * spec.max_depth
    depth = np.broadcast_to(far - (far - near) * (yy / max(h - 1, 1)), (h, w)).copy()

    for _ in range(int(rng.integers(3, 9))):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        size = rng.uniform(h / 16, h / 4)
        z0 = rng.uniform(0.15, 0.80) * spec.max_depth
        if rng.random() < 0.5:
            top = max(int(cy - size), 0)
            left = max(int(cx - size), 0)
            bot = min(int(cy + size) + 1, h)
            right = min(int(cx + size) + 1, w)
            if top < bot and left < right:
                depth[top:bot, left:right] = np.minimum(depth[top:bot, left:right], z0)
        else:
            rho2 = (yy - cy) ** 2 + (xx - cx) ** 2
            inside = rho2 <= size * size
            bump = rng.uniform(0.05, 0.15) * spec.max_depth
            front = z0 - bump * np.sqrt(np.maximum(size * size - rho2, 0.0)) / size
            depth = np.where(inside, np.minimum(depth, front), depth)

    depth = np.clip(depth, 0.02 * spec.max_depth, spec.max_depth)

    shade = 1.0 - depth / spec.max_depth
    tint = rng.uniform(0.6, 1.0, size=3)
    noise = rng.random((3, h, w))
    color = np.clip(shade[None] * tint[:, None, None] + 0.15 * noise, 0.0, 1.0)

    gt_mask = rng.random((h, w)) < spec.gt_density

    gt = depth.astype(np.float32)[None]
    mask = gt_mask[None]
    sparse, input_mask = sparsify(gt, mask, spec.sample_rate, int(rng.integers(0, 2**31)))
    return Sample(
        color=color.astype(np.float32),
        gt_depth=gt,
        gt_mask=mask,
        sparse_depth=sparse,
        input_mask=input_mask,
    )


def sparsify(gt_depth: np.ndarray, gt_mask: np.ndarray, rate: float, seed: int):
    """Bernoulli(rate) subsample of the GT-valid pixels.

    Returns (sparse_depth, input_mask); unsampled pixels are exactly 0.
    """
    if not 0 < rate <= 1:
        raise ValueError("rate must be in (0, 1]")
    if not np.any(gt_mask):
        raise ValueError("no valid GT pixels to sample from")
    rng = np.random.default_rng(seed)
    keep = gt_mask & (rng.random(gt_mask.shape) < rate) if rate < 1 else gt_mask.copy()
    sparse = np.where(keep, gt_depth, np.float32(0.0)).astype(gt_depth.dtype)
    return sparse, keep


def generate_dataset(spec: DatasetSpec) -> list[Sample]:
    return [gen_scene(spec, i) for i in range(spec.count)]


# -- .dmap binary format --------------------------------------------------


def write_dmap(path, arr: np.ndarray) -> None:
    """magic 'DMAP', u32 version, u32 C/H/W, f32 payload, u64 checksum (LE)."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"write_dmap expects (C, H, W), got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("write_dmap: non-finite values")
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(DMAP_MAGIC)
        fh.write(struct.pack("<IIII", DMAP_VERSION, *arr.shape))
        fh.write(payload)
        fh.write(struct.pack("<Q", fnv1a64(payload)))


def read_dmap(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != DMAP_MAGIC:
        raise BadMagicError(f"{path}: not a DMAP file")
    if len(blob) < 20:
        raise TruncatedError(f"{path}: truncated header")
    version, c, h, w = struct.unpack_from("<IIII", blob, 4)
    if version != DMAP_VERSION:
        raise DmapError(f"{path}: unsupported version {version}")
    need = 20 + 4 * c * h * w + 8
    if len(blob) < need:
        raise TruncatedError(f"{path}: expected {need} bytes, found {len(blob)}")
    payload = blob[20 : 20 + 4 * c * h * w]
    (stored,) = struct.unpack_from("<Q", blob, 20 + len(payload))
    if fnv1a64(payload) != stored:
        raise ChecksumError(f"{path}: checksum mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).copy()


def write_pnm16(path, depth_m: np.ndarray) -> None:
    """16-bit grayscale PNM export, pixel = round(depth * 256) clamped."""
    d = np.asarray(depth_m, dtype=np.float64)
    if d.ndim == 3 and d.shape[0] == 1:
        d = d[0]
    if d.ndim != 2:
        raise ValueError(f"write_pnm16 expects (H, W), got shape {d.shape}")
    pix = np.clip(np.rint(d * 256.0), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{d.shape[1]} {d.shape[0]}\n65535\n".encode("ascii"))
        fh.write(pix.tobytes())


# -- on-disk dataset layout ------------------------------------------------

MANIFEST_NAME = "manifest.txt"


def write_dataset(dirpath, spec: DatasetSpec) -> list[Sample]:
    """Materialize a dataset directory of .dmap files plus a manifest."""
    root = Path(dirpath)
    root.mkdir(parents=True, exist_ok=True)
    samples = generate_dataset(spec)
    lines = []
    for i, s in enumerate(samples):
        names = {
            "color": f"{i:05d}_color.dmap",
            "sparse": f"{i:05d}_sparse.dmap",
            "gt": f"{i:05d}_gt.dmap",
            "mask": f"{i:05d}_mask.dmap",
        }
        write_dmap(root / names["color"], s.color)
        write_dmap(root / names["sparse"], s.sparse_depth)
        write_dmap(root / names["gt"], s.gt_depth * s.gt_mask)
        write_dmap(root / names["mask"], s.input_mask.astype(np.float32))
        lines.append(f"{i},{names['color']},{names['sparse']},{names['gt']},{names['mask']}")
    (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return samples


def load_dataset(dirpath) -> list[Sample]:
    root = Path(dirpath)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {dirpath}")
    samples = []
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        _, color_p, sparse_p, gt_p, mask_p = line.split(",")
        color = read_dmap(root / color_p)
        sparse = read_dmap(root / sparse_p)
        gt = read_dmap(root / gt_p)
        input_mask = read_dmap(root / mask_p) > 0.5
        gt_mask = gt > 0
        samples.append(
            Sample(
                color=color,
                gt_depth=np.where(gt_mask, gt, np.float32(1.0)),
                gt_mask=gt_mask,
                sparse_depth=sparse,
                input_mask=input_mask,
            )
        )
    return samples
