"""Closed-form activation-memory model for the three guidance variants.

The guided-convolution mechanisms differ only in the per-pixel state
they materialize:

- dynamic convolution: a full kernel bank, C*C*R^2*H*W elements;
- channel-wise/cross-channel factorization: depthwise kernels plus a
  C x C mixing matrix, C*R^2*H*W + C*C elements;
- efficient guidance: the gated product plus the mixing matrix,
  C*H*W + C*C elements.

Byte counts are exact integers; the ratios are exact rationals of those
integers (not of rounded GB figures). GB here means 2**30 bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, TextIO

GIB = 2**30

CSV_HEADER = "C,H,W,R,elem_bytes,bytes_dc,bytes_cf,bytes_eg,ratio_eg_dc,ratio_eg_cf"


@dataclass
class MemCostReport:
    C: int
    H: int
    W: int
    R: int
    elem_bytes: int
    bytes_dc: int
    bytes_cf: int
    bytes_eg: int
    ratio_eg_dc: Fraction
    ratio_eg_cf: Fraction

    @property
    def gb_dc(self) -> float:
        return self.bytes_dc / GIB

    @property
    def gb_cf(self) -> float:
        return self.bytes_cf / GIB

    @property
    def gb_eg(self) -> float:
        return self.bytes_eg / GIB

    def csv_row(self) -> str:
        return (
            f"{self.C},{self.H},{self.W},{self.R},{self.elem_bytes},"
            f"{self.bytes_dc},{self.bytes_cf},{self.bytes_eg},"
            f"{float(self.ratio_eg_dc):.6g},{float(self.ratio_eg_cf):.6g}"
        )


def elems_dc(C: int, H: int, W: int, R: int) -> int:
    return C * C * R * R * H * W


def elems_cf(C: int, H: int, W: int, R: int) -> int:
    return C * R * R * H * W + C * C


def elems_eg(C: int, H: int, W: int, R: int) -> int:
    return C * H * W + C * C


def cost(C: int, H: int, W: int, R: int, elem_bytes: int = 4) -> MemCostReport:
    """Exact byte counts and ratios for one (C, H, W, R) configuration."""
    for name, v in (("C", C), ("H", H), ("W", W), ("R", R), ("elem_bytes", elem_bytes)):
        if not isinstance(v, (int,)) or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    bytes_dc = elems_dc(C, H, W, R) * elem_bytes
    bytes_cf = elems_cf(C, H, W, R) * elem_bytes
    bytes_eg = elems_eg(C, H, W, R) * elem_bytes
    return MemCostReport(
        C=C,
        H=H,
        W=W,
        R=R,
        elem_bytes=elem_bytes,
        bytes_dc=bytes_dc,
        bytes_cf=bytes_cf,
        bytes_eg=bytes_eg,
        ratio_eg_dc=Fraction(bytes_eg, bytes_dc),
        ratio_eg_cf=Fraction(bytes_eg, bytes_cf),
    )


def sweep(grid: Iterable[tuple[int, int, int, int]], elem_bytes: int = 4) -> list[MemCostReport]:
    """One report per (C, H, W, R) grid point."""
    grid = list(grid)
    if not grid:
        raise ValueError("sweep needs a nonempty grid")
    return [cost(c, h, w, r, elem_bytes) for (c, h, w, r) in grid]


def write_csv(reports: list[MemCostReport], out: TextIO) -> None:
    out.write(CSV_HEADER + "\n")
    for r in reports:
        out.write(r.csv_row() + "\n")
