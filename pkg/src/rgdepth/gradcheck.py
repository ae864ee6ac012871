"""Finite-difference verification of analytic gradients.

check_gradients() perturbs every element of every checked array by
+/- eps, recomputes a scalar projection of the op's output, and compares
the central-difference slope against the gradient the tape produced.
Double precision is required; central differences drown in float32
noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, mul, sum_all


@dataclass
class GradReport:
    op: str
    max_rel_err: float
    elements: int

    def __post_init__(self):
        if self.max_rel_err < 0:
            raise ValueError("relative error cannot be negative")

    def ok(self, threshold: float = 1e-4) -> bool:
        return np.isfinite(self.max_rel_err) and self.max_rel_err < threshold

    def __str__(self):
        return f"{self.op}: max rel err {self.max_rel_err:.3e} over {self.elements} elements"


def check_gradients(name, forward, wrt, eps=1e-6, projection_seed=0) -> GradReport:
    """Compare tape gradients of `forward` against central differences.

    forward is a no-argument callable returning a Tensor; it must close
    over the Tensors listed in `wrt` (inputs and/or parameters), all
    float64 with requires_grad set. The output is reduced to a scalar by
    a fixed random projection so every output element participates.

    A non-finite analytic gradient is reported as a failed check (error
    = inf), not raised.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-4]")
    wrt = list(wrt)
    for t in wrt:
        if t.data.dtype != np.float64:
            raise ValueError("check_gradients requires float64 tensors")
        if not t.requires_grad:
            raise ValueError("every checked tensor must require grad")

    out = forward()
    proj = np.random.default_rng(projection_seed).standard_normal(out.data.shape)

    def scalar():
        return float(np.sum(forward().data * proj))

    for t in wrt:
        t.grad = None
    loss = sum_all(mul(out, Tensor(proj)))
    loss.backward()

    analytic = []
    for t in wrt:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        analytic.append(g.copy())
    if not all(np.isfinite(g).all() for g in analytic):
        return GradReport(name, float("inf"), sum(t.data.size for t in wrt))

    max_err = 0.0
    count = 0
    for t, g in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            f_plus = scalar()
            flat[i] = keep - eps
            f_minus = scalar()
            flat[i] = keep
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            max_err = max(max_err, abs(gflat[i] - numeric) / denom)
            count += 1
    return GradReport(name, max_err, count)
