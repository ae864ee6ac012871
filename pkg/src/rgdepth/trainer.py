"""Optimization loop, checkpoint/resume, and the ablation harness.

Adam with classical L2 weight decay (decay folded into the gradient;
a flag switches to decoupled form), learning rate halving on a fixed
epoch schedule, deterministic per-epoch shuffling derived from (seed,
epoch) so a resumed run continues bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import memcost
from .data import DatasetSpec, Sample, generate_dataset
from .metrics import MetricReport, evaluate, mean_reports
from .model import CompletionNet, ModelConfig, build, load_checkpoint, masked_mse, save_checkpoint

LOG_HEADER = "epoch,step,lr,loss,rmse_mm,mae_mm,irmse,imae,rel,delta1,delta2,delta3"


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-6
    decoupled_decay: bool = False
    epochs: int = 20
    lr_half_every: int = 5
    batch_size: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * 0.5 ** (epoch // self.lr_half_every)


class AdamState:
    """First/second moment buffers keyed by parameter name, plus the step count."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0

    def ensure(self, name, like):
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)


def adam_step(named_params, grads, state: AdamState, t: int, cfg: TrainConfig, lr=None):
    """Apply one bias-corrected Adam update in place.

    named_params is a list of (name, array); grads aligns with it. If any
    gradient is non-finite the step is rejected: parameters and state are
    left untouched and (False, diagnostic) is returned.
    """
    if t < 1:
        raise ValueError("step index t starts at 1")
    lr = cfg.lr0 if lr is None else lr
    for (name, p), g in zip(named_params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if not np.isfinite(g).all():
            return False, f"non-finite gradient in {name}; step {t} rejected"

    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for (name, p), g in zip(named_params, grads):
        state.ensure(name, p)
        if cfg.weight_decay and not cfg.decoupled_decay:
            g = g + cfg.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay and cfg.decoupled_decay:
            update = update + cfg.weight_decay * p
        p -= (lr * update).astype(p.dtype, copy=False)
    state.t = t
    return True, ""


@dataclass
class TrainResult:
    log_lines: list
    checkpoints: list
    skipped_samples: int
    rejected_steps: int
    final_val: MetricReport | None


def _sample_loss(model: CompletionNet, sample: Sample):
    pred = model.forward(sample.color, sample.sparse_depth, sample.input_mask)
    return masked_mse(pred, sample.gt_depth, sample.gt_mask)


def validate_model(model: CompletionNet, samples) -> MetricReport:
    reports = []
    for s in samples:
        pred = model.predict(s.color, s.sparse_depth, s.input_mask)
        reports.append(evaluate(pred, s.gt_depth, s.gt_mask))
    return mean_reports(reports)


def train(model: CompletionNet, train_samples, val_samples, cfg: TrainConfig,
          out_dir=None, resume_from=None) -> TrainResult:
    """Run the epoch loop; returns the log and writes per-epoch checkpoints.

    Shuffling for epoch e is drawn from (cfg.seed, e), so resuming from
    the epoch-e checkpoint reproduces the uninterrupted run exactly.
    """
    if not train_samples:
        raise ValueError("empty training set")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    state = AdamState()
    start_epoch = 0
    if resume_from is not None:
        start_epoch = _load_training_checkpoint(model, state, resume_from) + 1

    named = list(model.named_parameters())
    log_lines = [] if start_epoch else [LOG_HEADER]
    checkpoints = []
    skipped = 0
    rejected = 0
    final_val = None

    for epoch in range(start_epoch, cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(epoch,))
        ).permutation(len(train_samples))
        step_in_epoch = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[lo : lo + cfg.batch_size]]
            usable = [s for s in batch if s.gt_mask.any()]
            skipped += len(batch) - len(usable)
            if not usable:
                continue
            model.zero_grad()
            losses = []
            for sample in usable:
                loss = _sample_loss(model, sample)
                losses.append(float(loss.data))
                loss.backward(np.asarray(1.0 / len(usable), dtype=loss.data.dtype))
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for _, p in named]
            ok, msg = adam_step(
                [(n, p.data) for n, p in named], grads, state, state.t + 1, cfg, lr=lr
            )
            if not ok:
                rejected += 1
                log_lines.append(f"# {msg}")
            mean_loss = math.fsum(losses) / len(losses)
            log_lines.append(f"{epoch},{step_in_epoch},{lr:.10g},{mean_loss:.9g},,,,,,,,")
            step_in_epoch += 1

        if val_samples:
            final_val = validate_model(model, val_samples)
            log_lines.append(
                f"{epoch},val,{lr:.10g},,{final_val.rmse_mm:.9g},{final_val.mae_mm:.9g},"
                f"{final_val.irmse:.9g},{final_val.imae:.9g},{final_val.rel:.9g},"
                f"{final_val.delta1:.9g},{final_val.delta2:.9g},{final_val.delta3:.9g}"
            )
        if out_dir is not None:
            ckpt = out_dir / f"ckpt_epoch_{epoch:04d}.rig"
            _save_training_checkpoint(model, state, epoch, ckpt)
            checkpoints.append(ckpt)

    return TrainResult(log_lines, checkpoints, skipped, rejected, final_val)


def _save_training_checkpoint(model: CompletionNet, state: AdamState, epoch: int, path):
    arrays = dict(model.state_arrays())
    for name in list(arrays):
        if name in state.m:
            arrays[f"adam.m.{name}"] = state.m[name]
            arrays[f"adam.v.{name}"] = state.v[name]
    arrays["adam.t"] = np.asarray(float(state.t), dtype=np.float32)
    config = {"model": model.cfg.to_dict(), "epoch": epoch, "step": state.t}
    save_checkpoint(path, config, arrays)


def _load_training_checkpoint(model: CompletionNet, state: AdamState, path) -> int:
    config, arrays = load_checkpoint(path)
    model.load_state_arrays({k: v for k, v in arrays.items() if not k.startswith("adam.")})
    dtype = np.dtype(model.cfg.dtype)
    for name, _ in model.named_parameters():
        mkey, vkey = f"adam.m.{name}", f"adam.v.{name}"
        if mkey in arrays:
            state.m[name] = arrays[mkey].astype(dtype)
            state.v[name] = arrays[vkey].astype(dtype)
    if "step" in config:
        state.t = int(config["step"])
    elif "adam.t" in arrays:
        state.t = int(arrays["adam.t"].reshape(()))
    return int(config["epoch"])


def load_model(path) -> CompletionNet:
    """Rebuild a model from a checkpoint written by train()."""
    config, arrays = load_checkpoint(path)
    model = build(ModelConfig.from_dict(config["model"]))
    model.load_state_arrays({k: v for k, v in arrays.items() if not k.startswith("adam.")})
    return model


# -- ablation harness -------------------------------------------------------


@dataclass
class AblationVariant:
    label: str
    config: ModelConfig


def default_plan(levels=3, base_channels=8, hourglass_reps=2) -> list[AblationVariant]:
    """Variant grid: guidance baselines, repetition counts, fusion modes,
    and hourglass stacking depths, all sharing one backbone."""

    def cfg(unit="eg", k=1, fusion="last", reps=hourglass_reps):
        from .hourglass import HourglassConfig

        return ModelConfig(
            hourglass=HourglassConfig(levels=levels, base_channels=base_channels, repetitions=reps),
            rg_repetitions=k,
            fusion=fusion,
            guidance_unit=unit,
        )

    plan = [
        AblationVariant("g1_baseline", cfg(unit="g1")),
        AblationVariant("eg1", cfg(k=1)),
        AblationVariant("eg2", cfg(k=2)),
        AblationVariant("eg3_last", cfg(k=3, fusion="last")),
        AblationVariant("eg3_add", cfg(k=3, fusion="add")),
        AblationVariant("eg3_concat", cfg(k=3, fusion="concat")),
        AblationVariant("eg3_af", cfg(k=3, fusion="adaptive")),
        AblationVariant("rhn1", cfg(k=2, fusion="adaptive", reps=1)),
        AblationVariant("rhn2", cfg(k=2, fusion="adaptive", reps=2)),
        AblationVariant("rhn3", cfg(k=2, fusion="adaptive", reps=3)),
    ]
    labels = [v.label for v in plan]
    assert len(labels) == len(set(labels))
    return plan


def guidance_memory_proxy(cfg: ModelConfig, height: int, width: int, elem_bytes: int = 4) -> int:
    """Analytic bytes of guidance activations across all fusion stages."""
    elems = {"g1": memcost.elems_dc, "cf": memcost.elems_cf, "eg": memcost.elems_eg}[cfg.guidance_unit]
    total = 0
    for j in cfg.fusion_levels:
        c = cfg.hourglass.channels(j)
        h = height // 2 ** (j - 1)
        w = width // 2 ** (j - 1)
        total += cfg.rg_repetitions * elems(c, h, w, 3) * elem_bytes
    return total


ABLATION_HEADER = "label,unit,k,fusion,hourglass_reps,seeds,rmse_mm_mean,rmse_mm_std,guidance_mem_bytes"


def run_ablation(plan, train_spec: DatasetSpec, val_spec: DatasetSpec, seeds, cfg: TrainConfig):
    """Train every variant under every seed on identical data; summarize.

    Returns (csv_lines, {label: [per-seed final val RMSE mm]}).
    """
    if not seeds:
        raise ValueError("need at least one seed")
    rows = [ABLATION_HEADER]
    rmse_by_label = {}
    for variant in plan:
        per_seed = []
        for seed in seeds:
            tr_spec = DatasetSpec(**{**asdict(train_spec), "seed": train_spec.seed + 1000 * seed})
            va_spec = DatasetSpec(**{**asdict(val_spec), "seed": val_spec.seed + 1000 * seed + 1})
            train_set = generate_dataset(tr_spec)
            val_set = generate_dataset(va_spec)
            model = build(variant.config, seed=seed)
            run_cfg = TrainConfig(**{**asdict(cfg), "seed": seed})
            result = train(model, train_set, val_set, run_cfg)
            per_seed.append(result.final_val.rmse_mm)
        mean = math.fsum(per_seed) / len(per_seed)
        std = math.sqrt(math.fsum((x - mean) ** 2 for x in per_seed) / len(per_seed))
        mem = guidance_memory_proxy(variant.config, train_spec.height, train_spec.width)
        rmse_by_label[variant.label] = per_seed
        rows.append(
            f"{variant.label},{variant.config.guidance_unit},{variant.config.rg_repetitions},"
            f"{variant.config.fusion},{variant.config.hourglass.repetitions},"
            f"{'|'.join(str(s) for s in seeds)},{mean:.6g},{std:.6g},{mem}"
        )
    return rows, rmse_by_label


# -- flat key=value config files --------------------------------------------


def parse_kv_config(path) -> dict:
    """One key=value pair per line; '#' starts a comment."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_kv_config(cfg: TrainConfig, kv: dict) -> TrainConfig:
    values = asdict(cfg)
    casts = {f: type(v) for f, v in values.items()}
    for key, raw in kv.items():
        if key not in values:
            continue
        kind = casts[key]
        values[key] = raw.lower() in ("1", "true", "yes") if kind is bool else kind(raw)
    return TrainConfig(**values)
