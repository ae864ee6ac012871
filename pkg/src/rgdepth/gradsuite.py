"""The standard gradient-check suite over every differentiable op.

Shapes stay small (at most 4 channels, 8x8 spatial) so the exhaustive
per-element central differences finish in seconds. Each entry builds a
fresh float64 instance per seed and checks gradients with respect to all
inputs and all parameters.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .gradcheck import GradReport, check_gradients
from .guidance import AdaptiveFusion, DynamicGuidance, EfficientGuidance, FactorizedGuidance
from .hourglass import HourglassConfig, HourglassUnit
from .model import masked_mse
from .tensor import Tensor


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _module_case(name, module, inputs, call, rng):
    # Check at a generic parameter point. In particular the zero-init
    # biases must move off 0: with ReLU-sparse activations a zero bias
    # can put a pre-activation exactly on the kink, where central
    # differences measure the wrong one-sided slope.
    for p in module.parameters():
        p.data = 0.6 * rng.standard_normal(p.data.shape)
    wrt = list(inputs) + [p for p in module.parameters()]
    return name, (lambda: call(*inputs)), wrt


def suite_cases(seed: int):
    """Yield (name, forward, wrt) triples for one seed.

    Shapes are drawn from the seed too, so the three-seed suite exercises
    three random shapes per op, all within the 4-channel / 8x8 bound.
    """
    rng = np.random.default_rng(seed)

    def dim(lo=4, hi=8):
        return int(rng.integers(lo, hi + 1))

    def ch():
        return int(rng.integers(1, 5))

    x = _t(rng, ch(), dim(), dim())
    w = _t(rng, ch(), x.shape[0], 3, 3)
    b = _t(rng, w.shape[0])
    yield "conv2d", (lambda: kernels.conv2d(x, w, b, stride=1, pad=1)), [x, w, b]

    xs = _t(rng, ch(), 8, 8)
    ws = _t(rng, ch(), xs.shape[0], 3, 3)
    yield "conv2d_stride2", (lambda: kernels.conv2d(xs, ws, None, stride=2, pad=1)), [xs, ws]

    xd = _t(rng, ch(), dim(2, 4), dim(2, 4))
    wd = _t(rng, xd.shape[0], ch(), 4, 4)
    bd = _t(rng, wd.shape[1])
    yield "deconv2d", (lambda: kernels.deconv2d(xd, wd, bd, stride=2, pad=1)), [xd, wd, bd]

    xg = _t(rng, ch(), dim(), dim())
    yield "global_avg_pool", (lambda: kernels.global_avg_pool(xg)), [xg]

    wm = _t(rng, int(rng.integers(1, 5)), dim())
    yield "softmax_branches", (lambda: kernels.softmax_branches(wm)), [wm]

    c = int(rng.integers(2, 4))
    h, wdt = dim(4, 6), dim(4, 6)
    img = _t(rng, c, h, wdt)
    dep = _t(rng, c, h, wdt)
    eg = EfficientGuidance(c, np.random.default_rng(seed + 100))
    yield _module_case("eg_unit", eg, [img, dep], eg.forward, rng)

    c1 = int(rng.integers(1, 3))
    h1, w1 = dim(3, 4), dim(3, 4)
    img1 = _t(rng, c1, h1, w1)
    dep1 = _t(rng, c1, h1, w1)
    g1 = DynamicGuidance(c1, np.random.default_rng(seed + 101))
    yield _module_case("dynamic_conv_g1", g1, [img1, dep1], g1.forward, rng)

    c2 = int(rng.integers(1, 3))
    h2, w2 = dim(3, 4), dim(3, 4)
    img2 = _t(rng, c2, h2, w2)
    dep2 = _t(rng, c2, h2, w2)
    cf = FactorizedGuidance(c2, np.random.default_rng(seed + 102))
    yield _module_case("conv_factorized_cf", cf, [img2, dep2], cf.forward, rng)

    ca = int(rng.integers(2, 4))
    ka = int(rng.integers(2, 4))
    ha, wa = dim(3, 4), dim(3, 4)
    branches = [_t(rng, ca, ha, wa) for _ in range(ka)]
    af = AdaptiveFusion(ca, ka, np.random.default_rng(seed + 103))
    yield _module_case("adaptive_fusion", af, branches, lambda *bs: af.forward(bs), rng)

    hr, wr = 2 * dim(2, 4), 2 * dim(2, 4)
    xin = _t(rng, 2, hr, wr)
    unit = HourglassUnit(HourglassConfig(levels=2, base_channels=2), np.random.default_rng(seed + 104))
    yield _module_case("rhn_unit", unit, [xin], lambda t: unit.forward(t).decoder[0], rng)

    pred = _t(rng, 1, dim(), dim())
    gt = rng.standard_normal(pred.shape)
    mask = np.random.default_rng(seed + 105).random(pred.shape) < 0.7
    if not mask.any():
        mask[0, 0, 0] = True
    yield "masked_mse", (lambda: masked_mse(pred, gt, mask)), [pred]


def run_default_suite(seeds=(0, 1, 2), eps=1e-6) -> list[GradReport]:
    reports = []
    for seed in seeds:
        for name, forward, wrt in suite_cases(seed):
            rep = check_gradients(f"{name}[seed={seed}]", forward, wrt, eps=eps)
            reports.append(rep)
    return reports
