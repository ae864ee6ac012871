"""Command-line entry point.

Subcommands: gen-data, train, eval, infer, memcost, ablate, gradcheck.
All randomness flows from explicit --seed flags; given identical flags,
every command reproduces its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import memcost
from .data import DatasetSpec, load_dataset, read_dmap, write_dataset, write_dmap, write_pnm16
from .gradcheck import GradReport
from .hourglass import HourglassConfig
from .metrics import MetricReport, evaluate
from .model import ModelConfig, build
from .trainer import (
    TrainConfig,
    apply_kv_config,
    default_plan,
    load_model,
    parse_kv_config,
    run_ablation,
    train,
)


def _add_model_flags(p):
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--hourglass-reps", type=int, default=2)
    p.add_argument("--encoder-depth", type=int, default=1)
    p.add_argument("--rg-reps", type=int, default=2)
    p.add_argument("--fusion", choices=("last", "add", "concat", "adaptive"), default="adaptive")
    p.add_argument("--guidance-unit", choices=("eg", "cf", "g1"), default="eg")


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        hourglass=HourglassConfig(
            levels=args.levels,
            base_channels=args.base_channels,
            repetitions=args.hourglass_reps,
            encoder_depth=args.encoder_depth,
        ),
        rg_repetitions=args.rg_reps,
        fusion=args.fusion,
        guidance_unit=args.guidance_unit,
    )


def _add_data_flags(p, count_default):
    p.add_argument("--count", type=int, default=count_default)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--rate", type=float, default=0.05)
    p.add_argument("--gt-density", type=float, default=0.95)
    p.add_argument("--max-depth", type=float, default=10.0)


def _dataset_spec(args, seed) -> DatasetSpec:
    return DatasetSpec(
        count=args.count,
        height=args.height,
        width=args.width,
        sample_rate=args.rate,
        gt_density=args.gt_density,
        max_depth=args.max_depth,
        seed=seed,
    )


def cmd_gen_data(args) -> int:
    spec = _dataset_spec(args, args.seed)
    samples = write_dataset(args.out, spec)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, lr0=args.lr0,
        weight_decay=args.weight_decay,
    )
    if args.config:
        cfg = apply_kv_config(cfg, parse_kv_config(args.config))
    train_set = load_dataset(args.data)
    val_set = load_dataset(args.val_data) if args.val_data else train_set
    model = build(_model_config(args), seed=cfg.seed)
    result = train(model, train_set, val_set, cfg, out_dir=args.out, resume_from=args.resume)
    log_path = Path(args.out) / "train_log.csv"
    mode = "a" if args.resume else "w"
    with open(log_path, mode) as fh:
        fh.write("\n".join(result.log_lines) + "\n")
    if result.final_val is not None:
        print(f"final val rmse {result.final_val.rmse_mm:.3f} mm")
    print(f"log: {log_path}; checkpoints: {len(result.checkpoints)}; "
          f"skipped {result.skipped_samples} empty-mask samples")
    return 0


def cmd_eval(args) -> int:
    pred = read_dmap(args.pred)
    gt = read_dmap(args.gt)
    mask = np.ones_like(gt, dtype=bool) if args.mask == "full" else read_dmap(args.mask) > 0.5
    report = evaluate(pred, gt, mask)
    print(MetricReport.csv_header())
    print(report.csv_row())
    return 0


def cmd_infer(args) -> int:
    model = load_model(args.checkpoint)
    color = read_dmap(args.color)
    sparse = read_dmap(args.sparse)
    mask = read_dmap(args.mask) > 0.5 if args.mask else sparse > 0
    pred = model.predict(color, sparse, mask)
    write_dmap(args.out + ".dmap", pred)
    write_pnm16(args.out + ".pnm", pred)
    print(f"wrote {args.out}.dmap and {args.out}.pnm")
    return 0


def _int_list(text):
    return [int(tok) for tok in text.split(",") if tok]


def cmd_memcost(args) -> int:
    grid = [(c, h, w, r) for c in args.C for h in args.H for w in args.W for r in args.R]
    reports = memcost.sweep(grid, elem_bytes=args.elem_bytes)
    if args.csv:
        with open(args.csv, "w") as fh:
            memcost.write_csv(reports, fh)
        print(f"wrote {len(reports)} rows to {args.csv}")
    else:
        memcost.write_csv(reports, sys.stdout)
    if len(reports) == 1:
        r = reports[0]
        print(
            f"memory: dynamic convolution {r.gb_dc:.4g} GB, factorization {r.gb_cf:.3g} GB, "
            f"efficient guidance {r.gb_eg:.2g} GB"
        )
    return 0


def cmd_ablate(args) -> int:
    plan = default_plan(levels=args.levels, base_channels=args.base_channels,
                        hourglass_reps=args.hourglass_reps)
    if args.variants:
        wanted = set(args.variants.split(","))
        unknown = wanted - {v.label for v in plan}
        if unknown:
            raise ValueError(f"unknown variants: {sorted(unknown)}")
        plan = [v for v in plan if v.label in wanted]
    train_spec = _dataset_spec(args, args.seed)
    val_spec = DatasetSpec(
        count=args.val_count, height=args.height, width=args.width, sample_rate=args.rate,
        gt_density=args.gt_density, max_depth=args.max_depth, seed=args.seed + 7,
    )
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    rows, _ = run_ablation(plan, train_spec, val_spec, _int_list(args.seeds), cfg)
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    print(text, end="")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_default_suite

    reports: list[GradReport] = run_default_suite(seeds=_int_list(args.seeds), eps=args.eps)
    worst = 0.0
    failed = 0
    for rep in reports:
        status = "ok" if rep.ok(args.threshold) else "FAIL"
        print(f"{status:4s} {rep}")
        failed += not rep.ok(args.threshold)
        if np.isfinite(rep.max_rel_err):
            worst = max(worst, rep.max_rel_err)
    print(f"{len(reports) - failed}/{len(reports)} passed; worst finite error {worst:.3e}")
    return 1 if failed else 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgdepth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_data_flags(p, count_default=16)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--lr0", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a prediction against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", default="full", help="'full' or a .dmap mask path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="predict dense depth for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--color", required=True)
    p.add_argument("--sparse", required=True)
    p.add_argument("--mask")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("memcost", help="analytic guidance memory model")
    p.add_argument("--C", type=_int_list, required=True)
    p.add_argument("--H", type=_int_list, required=True)
    p.add_argument("--W", type=_int_list, required=True)
    p.add_argument("--R", type=_int_list, required=True)
    p.add_argument("--elem-bytes", type=int, default=4)
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_memcost)

    p = sub.add_parser("ablate", help="train and compare model variants")
    p.add_argument("--out")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--seed", type=int, default=0, help="dataset seed base")
    p.add_argument("--variants", help="comma-separated labels; default all")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--val-count", type=int, default=64)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--hourglass-reps", type=int, default=2)
    _add_data_flags(p, count_default=16)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # surface a diagnostic, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
