"""Depth evaluation metrics.

Depths are meters in, reporting follows benchmark conventions: RMSE/MAE
in millimeters, inverse-depth errors in 1/km, delta thresholds as the
percentage of pixels with max(p/g, g/p) below 1.25, 1.25^2, 1.25^3.
Pixels where the prediction or ground truth is non-positive cannot feed
the inverse/ratio metrics; they are excluded there and counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

MAX_PLAUSIBLE_DEPTH_M = 1000.0


@dataclass
class MetricReport:
    rmse_mm: float
    mae_mm: float
    irmse: float
    imae: float
    rel: float
    delta1: float
    delta2: float
    delta3: float
    excluded: int = 0

    def __post_init__(self):
        if not (self.delta1 <= self.delta2 <= self.delta3 <= 100.0 + 1e-9):
            raise ValueError("delta metrics must be nondecreasing and <= 100")

    @staticmethod
    def csv_header() -> str:
        return ",".join(f.name for f in fields(MetricReport))

    def csv_row(self) -> str:
        vals = [getattr(self, f.name) for f in fields(MetricReport)]
        return ",".join(str(v) if isinstance(v, int) else f"{v:.9g}" for v in vals)


def _flat(arr) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    return a.reshape(-1)


def evaluate(pred, gt, mask) -> MetricReport:
    """Metrics over the masked pixels of one prediction."""
    p = _flat(pred)
    g = _flat(gt)
    m = _flat(mask) > 0
    if p.shape != g.shape or p.shape != m.shape:
        raise ValueError(f"shape mismatch: pred {p.shape}, gt {g.shape}, mask {m.shape}")
    if not m.any():
        raise ValueError("empty evaluation mask")
    p = p[m]
    g = g[m]
    if g.max() > MAX_PLAUSIBLE_DEPTH_M:
        raise ValueError(
            f"ground truth max {g.max():.3g} exceeds {MAX_PLAUSIBLE_DEPTH_M} m; depths must be meters"
        )

    diff = p - g
    rmse_mm = 1000.0 * math.sqrt(float(np.mean(diff * diff)))
    mae_mm = 1000.0 * float(np.mean(np.abs(diff)))

    ok = (p > 0) & (g > 0)
    excluded = int(np.count_nonzero(~ok))
    if not ok.any():
        irmse = imae = rel = float("nan")
        d1 = d2 = d3 = 0.0
    else:
        pv = p[ok]
        gv = g[ok]
        # inverse depth in 1/km: depth meters -> km is /1000, so 1/km = 1000/m
        idiff = 1000.0 / pv - 1000.0 / gv
        irmse = math.sqrt(float(np.mean(idiff * idiff)))
        imae = float(np.mean(np.abs(idiff)))
        rel = float(np.mean(np.abs(pv - gv) / gv))
        ratio = np.maximum(pv / gv, gv / pv)
        n = ok.sum()
        d1 = 100.0 * float(np.count_nonzero(ratio < 1.25)) / n
        d2 = 100.0 * float(np.count_nonzero(ratio < 1.25**2)) / n
        d3 = 100.0 * float(np.count_nonzero(ratio < 1.25**3)) / n

    return MetricReport(rmse_mm, mae_mm, irmse, imae, rel, d1, d2, d3, excluded)


def mean_reports(reports: list[MetricReport]) -> MetricReport:
    """Average per-sample reports field by field with exact summation."""
    if not reports:
        raise ValueError("no reports to average")
    n = len(reports)
    vals = {}
    for f in fields(MetricReport):
        col = [getattr(r, f.name) for r in reports]
        if f.name == "excluded":
            vals[f.name] = int(sum(col))
        else:
            vals[f.name] = math.fsum(col) / n
    return MetricReport(**vals)
