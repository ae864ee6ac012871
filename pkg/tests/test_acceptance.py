"""Acceptance suite: one test per exit criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the pass/fail
lines. The slow criteria (overfit, variant comparison, cross-process
determinism) sit at the end.
"""

import math
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from rgdepth import data, memcost
from rgdepth.data import DatasetSpec, generate_dataset
from rgdepth.gradsuite import run_default_suite
from rgdepth.guidance import AdaptiveFusion, DynamicGuidance, RepetitiveGuidance
from rgdepth.hourglass import HourglassConfig
from rgdepth.kernels import conv2d
from rgdepth.metrics import evaluate
from rgdepth.model import ModelConfig, build, desk_default_config, load_checkpoint, masked_mse, save_checkpoint
from rgdepth.tensor import Tensor
from rgdepth.trainer import AdamState, TrainConfig, adam_step, default_plan, run_ablation, validate_model

from test_kernels import conv_oracle


def _report(num, passed, detail):
    status = "PASS" if passed else "FAIL"
    print(f"[criterion {num:2d}] {status} - {detail}")
    assert passed, f"criterion {num}: {detail}"


def test_c01_memory_model_reference_point():
    t0 = time.time()
    r = memcost.cost(C=128, H=128, W=608, R=3, elem_bytes=4)
    ok = (
        abs(r.gb_dc - 42.75) < 0.005
        and abs(r.gb_cf - 0.334) < 0.0005
        and abs(r.gb_eg - 0.037) < 0.0005
        and 8.9 <= r.bytes_cf / r.bytes_eg <= 9.1
        and 1150 <= r.bytes_dc / r.bytes_eg <= 1156
    )
    elapsed = time.time() - t0
    _report(
        1,
        ok and elapsed < 1.0,
        f"GB {r.gb_dc:.4g}/{r.gb_cf:.3g}/{r.gb_eg:.2g}, cf/eg {r.bytes_cf/r.bytes_eg:.3f}, "
        f"dc/eg {r.bytes_dc/r.bytes_eg:.1f} in {elapsed:.3f}s",
    )


def test_c02_ratio_identities_random_grid():
    t0 = time.time()
    rng = np.random.default_rng(0)
    ok = True
    for _ in range(100):
        c = int(rng.integers(1, 513))
        h = int(rng.integers(1, 2049))
        w = int(rng.integers(1, 2049))
        r = int(rng.integers(1, 9))
        rep = memcost.cost(c, h, w, r)
        ok &= rep.ratio_eg_dc == Fraction(1, c * r * r) + Fraction(1, h * w * r * r)
        ok &= rep.ratio_eg_cf == Fraction(h * w + c, h * w * r * r + c)
    elapsed = time.time() - t0
    _report(2, ok and elapsed < 1.0, f"100 grid points, exact rational equality, {elapsed:.3f}s")


def test_c03_gradient_suite():
    t0 = time.time()
    reports = run_default_suite(seeds=(0, 1, 2))
    bad = [str(r) for r in reports if not r.ok(1e-4)]
    elapsed = time.time() - t0
    worst = max(r.max_rel_err for r in reports)
    _report(
        3,
        not bad and elapsed < 120.0,
        f"{len(reports)} checks, worst rel err {worst:.2e}, {elapsed:.1f}s" + (f"; failed: {bad}" if bad else ""),
    )


def test_c04_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(1)

    x = rng.standard_normal((2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    got = conv2d(Tensor(x), Tensor(w), None, stride=1, pad=1).data
    err_conv = np.max(np.abs(got - conv_oracle(x, w, None, 1, 1)))

    c, h, wd, r = 2, 4, 4, 3
    g1 = DynamicGuidance(c, np.random.default_rng(2))
    img = Tensor(rng.standard_normal((c, h, wd)))
    dep = Tensor(rng.standard_normal((c, h, wd)))
    out = g1(img, dep).data
    kernels = g1.gen(img).data.reshape(c, c, r, r, h, wd)
    dp = np.pad(dep.data, ((0, 0), (1, 1), (1, 1)))
    want = np.zeros((c, h, wd))
    for o in range(c):
        for yy in range(h):
            for xx in range(wd):
                want[o, yy, xx] = sum(
                    kernels[o, i, u, v, yy, xx] * dp[i, yy + u, xx + v]
                    for i in range(c)
                    for u in range(r)
                    for v in range(r)
                )
    err_g1 = np.max(np.abs(out - want))

    rg = RepetitiveGuidance(2, 3, np.random.default_rng(3), mode="last")
    img2 = Tensor(rng.standard_normal((2, 6, 6)))
    dep2 = Tensor(rng.standard_normal((2, 6, 6)))
    fused = rg(img2, dep2).data
    d1 = rg.units[0](img2, dep2)
    d2 = rg.units[1](rg.refines[0](img2), d1)
    d3 = rg.units[2](rg.refines[1](img2), d2)
    err_rg = np.max(np.abs(fused - d3.data))

    elapsed = time.time() - t0
    ok = err_conv < 1e-10 and err_g1 < 1e-10 and err_rg < 1e-10 and elapsed < 30.0
    _report(4, ok, f"conv {err_conv:.1e}, dynamic {err_g1:.1e}, unrolled rg {err_rg:.1e}, {elapsed:.1f}s")


def test_c05_loss_masking():
    rng = np.random.default_rng(4)
    base = rng.standard_normal((1, 8, 8))
    gt = rng.standard_normal((1, 8, 8))
    mask = rng.random((1, 8, 8)) < 0.6

    pred_a = Tensor(base.copy(), requires_grad=True)
    loss_a = masked_mse(pred_a, gt, mask)
    loss_a.backward()

    perturbed = base.copy()
    perturbed[~mask] += rng.standard_normal(int((~mask).sum())) * 1e6
    pred_b = Tensor(perturbed, requires_grad=True)
    loss_b = masked_mse(pred_b, gt, mask)
    loss_b.backward()

    value_bitwise = float(loss_a.data) == float(loss_b.data)
    grad_gap = np.max(np.abs(pred_a.grad - pred_b.grad))
    invalid_zero = np.all(pred_a.grad[~mask] == 0) and np.all(pred_b.grad[~mask] == 0)
    _report(
        5,
        value_bitwise and grad_gap < 1e-12 and invalid_zero,
        f"loss bitwise {value_bitwise}, max grad gap {grad_gap:.1e}, invalid-pixel grads zero {invalid_zero}",
    )


def test_c06_adaptive_fusion_properties():
    rng = np.random.default_rng(5)
    worst_sum = 0.0
    hull_ok = True
    for trial in range(50):
        k = int(rng.integers(2, 5))
        c = int(rng.integers(2, 5))
        af = AdaptiveFusion(c, k, np.random.default_rng(trial))
        branches = [Tensor(rng.standard_normal((c, 5, 5)) * 4) for _ in range(k)]
        out = af(branches).data
        worst_sum = max(worst_sum, float(np.max(np.abs(af.last_alpha.sum(axis=0) - 1.0))))
        stack = np.stack([b.data for b in branches])
        hull_ok &= bool(np.all(out >= stack.min(axis=0) - 1e-9) and np.all(out <= stack.max(axis=0) + 1e-9))

    af1 = AdaptiveFusion(3, 1, np.random.default_rng(99))
    single = Tensor(rng.standard_normal((3, 4, 4)))
    identity_exact = np.array_equal(af1([single]).data, single.data)

    _report(
        6,
        worst_sum <= 1e-12 and identity_exact and hull_ok,
        f"max |sum(alpha)-1| {worst_sum:.1e}, k=1 exact {identity_exact}, hull held on 50 cases {hull_ok}",
    )


def test_c07_overfit_desk_default():
    t0 = time.time()
    model = build(desk_default_config(), seed=1)
    samples = generate_dataset(DatasetSpec(count=8, height=64, width=64, sample_rate=0.2, seed=4))
    cfg = TrainConfig(beta2=0.99, batch_size=8, seed=1)
    named = list(model.named_parameters())
    state = AdamState()
    r0 = validate_model(model, samples).rmse_mm
    peak, warmup, halve_after = 3e-3, 25, 250
    for step in range(1, 301):
        model.zero_grad()
        for s in samples:
            loss = masked_mse(model.forward(s.color, s.sparse_depth, s.input_mask), s.gt_depth, s.gt_mask)
            loss.backward(np.asarray(1.0 / len(samples), dtype=loss.data.dtype))
        lr = peak * min(1.0, step / warmup) * (0.5 if step > halve_after else 1.0)
        ok, msg = adam_step([(n, p.data) for n, p in named], [p.grad for _, p in named], state, step, cfg, lr=lr)
        assert ok, msg
    final = validate_model(model, samples).rmse_mm
    elapsed = time.time() - t0
    _report(
        7,
        final < 0.10 * r0 and elapsed < 600.0,
        f"train RMSE {final:.0f} mm vs step-0 {r0:.0f} mm (ratio {final/r0:.3f}) in 300 steps, {elapsed:.0f}s",
    )


def test_c08_variant_ordering():
    t0 = time.time()
    plan = [v for v in default_plan() if v.label in ("g1_baseline", "eg1", "eg3_af")]
    train_spec = DatasetSpec(count=16, sample_rate=0.2, seed=100)
    val_spec = DatasetSpec(count=64, sample_rate=0.2, seed=201)
    cfg = TrainConfig(epochs=25, batch_size=2, lr0=1e-3)
    _, rmse = run_ablation(plan, train_spec, val_spec, [0, 1, 2], cfg)
    mean = {label: math.fsum(vals) / len(vals) for label, vals in rmse.items()}
    ok = mean["eg3_af"] <= mean["eg1"] <= mean["g1_baseline"] * 1.02
    elapsed = time.time() - t0
    _report(
        8,
        ok and elapsed < 3600.0,
        f"mean RMSE: eg3_af {mean['eg3_af']:.1f} <= eg1 {mean['eg1']:.1f} <= "
        f"1.02*g1 {1.02*mean['g1_baseline']:.1f} mm over 3 seeds, {elapsed:.0f}s",
    )


def test_c09_determinism_and_persistence(tmp_path):
    ds = tmp_path / "ds"
    args = [sys.executable, "-m", "rgdepth", "gen-data", "--out", str(ds), "--count", "3",
            "--height", "16", "--width", "16", "--rate", "0.3", "--seed", "5"]
    subprocess.run(args, check=True, capture_output=True)

    def run_training(out):
        cmd = [sys.executable, "-m", "rgdepth", "train", "--data", str(ds), "--out", str(out),
               "--epochs", "2", "--levels", "2", "--base-channels", "4", "--hourglass-reps", "1",
               "--rg-reps", "1", "--fusion", "last", "--seed", "7"]
        subprocess.run(cmd, check=True, capture_output=True)
        log = (out / "train_log.csv").read_bytes()
        ckpts = sorted(out.glob("*.rig"))
        return log, [c.read_bytes() for c in ckpts]

    log_a, ckpts_a = run_training(tmp_path / "run_a")
    log_b, ckpts_b = run_training(tmp_path / "run_b")
    runs_identical = log_a == log_b and ckpts_a == ckpts_b

    arr = np.random.default_rng(0).standard_normal((2, 6, 6)).astype(np.float32)
    dmap_path = tmp_path / "x.dmap"
    data.write_dmap(dmap_path, arr)
    dmap_exact = np.array_equal(data.read_dmap(dmap_path), arr)

    ckpt_path = tmp_path / "m.rig"
    model = build(ModelConfig(hourglass=HourglassConfig(levels=2, base_channels=4), fusion="last"), seed=1)
    save_checkpoint(ckpt_path, {"model": model.cfg.to_dict()}, model.state_arrays())
    _, arrays = load_checkpoint(ckpt_path)
    ckpt_exact = all(np.array_equal(arrays[n], p.data) for n, p in model.named_parameters())

    corrupted = bytearray(dmap_path.read_bytes())
    corrupted[25] ^= 0x10
    dmap_path.write_bytes(bytes(corrupted))
    try:
        data.read_dmap(dmap_path)
        corruption_detected = False
    except data.DmapError:
        corruption_detected = True
    blob = bytearray(ckpt_path.read_bytes())
    blob[30] ^= 0x10
    ckpt_path.write_bytes(bytes(blob))
    try:
        load_checkpoint(ckpt_path)
        ckpt_corruption_detected = False
    except data.ChecksumError:
        ckpt_corruption_detected = True

    _report(
        9,
        runs_identical and dmap_exact and ckpt_exact and corruption_detected and ckpt_corruption_detected,
        f"two CLI runs identical {runs_identical}, dmap bitwise {dmap_exact}, checkpoint bitwise {ckpt_exact}, "
        f"corruption detected {corruption_detected and ckpt_corruption_detected}",
    )


def test_c10_metric_unit_tests():
    gt = np.random.default_rng(6).uniform(1, 9, size=(1, 16, 16))
    ident = evaluate(gt, gt, np.ones_like(gt, dtype=bool))
    identity_ok = (
        ident.rmse_mm == 0 and ident.mae_mm == 0 and ident.irmse == 0 and ident.imae == 0
        and ident.rel == 0 and ident.delta1 == ident.delta2 == ident.delta3 == 100.0
    )
    two = evaluate(np.array([[[3.0, 4.0]]]), np.array([[[2.0, 4.0]]]), np.ones((1, 1, 2), dtype=bool))
    two_ok = (
        round(two.rmse_mm, 1) == 707.1
        and two.rel == pytest.approx(0.25, abs=1e-15)
        and two.delta1 == pytest.approx(50.0, abs=1e-12)
    )
    _report(10, identity_ok and two_ok, f"identity {identity_ok}; analytic two-pixel case {two_ok}")
