"""Command-line surface: describe / count / gradcheck / train / eval / ablate.

Exit codes: 0 success, 1 check failure, 2 usage or input error.
Set DUALVIT_THREADS to cap BLAS worker threads (applied before numpy math
runs; also makes runs reproducible across machines with different core
counts).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

if "DUALVIT_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["DUALVIT_THREADS"])

from . import complexity, data, training
from .config import load_model_config
from .errors import ConfigError, DualVitError, FormatError, InputError
from .model import DUAL_VARIANTS, ModelConfig, PRESET_NAMES, build_model, preset_config

USAGE_ERROR = 2
CHECK_FAILURE = 1


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=[n.lower() for n in PRESET_NAMES] + list(PRESET_NAMES),
                   help="named architecture preset")
    g.add_argument("--config", help="path to a JSON model config")
    p.add_argument("--seed", type=int, default=None, help="override config seed")


def _resolve_config(args) -> ModelConfig:
    if args.config:
        cfg = load_model_config(args.config)
    else:
        cfg = preset_config(args.preset)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "res", None) is not None:
        cfg.resolution = args.res
        cfg.validate()
    return cfg


def _describe_dict(cfg: ModelConfig) -> dict:
    return {
        "m": cfg.m,
        "num_classes": cfg.num_classes,
        "resolution": cfg.resolution,
        "pos_embed": cfg.pos_embed,
        "stages": [
            {
                "stage": i + 1,
                "kind": s.kind,
                "depth": s.depth,
                "heads": s.heads,
                "channels": s.channels,
                "ffn_ratio_pixel": s.ffn_ratio_pixel,
                "ffn_ratio_semantic": s.ffn_ratio_semantic,
                "patch_size": s.patch_size,
                "tokens": tokens,
            }
            for i, (s, tokens) in enumerate(zip(cfg.stages, cfg.token_counts()))
        ],
    }


def cmd_describe(args) -> int:
    cfg = _resolve_config(args)
    info = _describe_dict(cfg)
    if args.json:
        print(json.dumps(info, indent=2))
        return 0
    print(f"resolution {cfg.resolution}  semantic tokens m={cfg.m}  "
          f"classes {cfg.num_classes}  pos_embed {cfg.pos_embed}")
    header = f"{'stage':>5} {'kind':>6} {'depth':>5} {'heads':>5} {'channels':>8} " \
             f"{'E^x':>4} {'E^z':>4} {'patch':>5} {'tokens':>7}"
    print(header)
    for s in info["stages"]:
        print(f"{s['stage']:>5} {s['kind']:>6} {s['depth']:>5} {s['heads']:>5} "
              f"{s['channels']:>8} {s['ffn_ratio_pixel']:>4} {s['ffn_ratio_semantic']:>4} "
              f"{s['patch_size']:>5} {s['tokens']:>7}")
    return 0


def cmd_count(args) -> int:
    cfg = _resolve_config(args)
    model = build_model(cfg, variant=args.variant)
    report = complexity.count_macs(model, cfg.resolution)
    if args.json:
        print(report.to_json())
    else:
        print(report.to_text())
    return 0


def cmd_gradcheck(args) -> int:
    report = training.gradcheck_block(args.block, tolerance=args.tol,
                                      samples=args.samples, seed=args.seed or 0)
    status = "PASS" if report.passed else "FAIL"
    print(f"[{status}] gradcheck {args.block}: max relative error "
          f"{report.max_rel_error:.3e} over {report.num_checked} parameters "
          f"(tolerance {report.tolerance:g})")
    for name, idx, ana, num, err in report.failures[:20]:
        print(f"  offending: {name}[{idx}] analytic={ana:.6e} "
              f"numeric={num:.6e} rel={err:.3e}")
    return 0 if report.passed else CHECK_FAILURE


def _load_dataset(spec: str, cfg: ModelConfig, per_class: int, seed: int) -> data.Dataset:
    if spec == "synthetic":
        return data.make_synthetic(cfg.num_classes, per_class, cfg.resolution, seed=seed)
    if not os.path.exists(spec):
        raise InputError(f"dataset file not found: {spec}")
    return data.load_packed_dataset(spec)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    model = build_model(cfg, variant=args.variant)
    dataset = _load_dataset(args.data, cfg, args.per_class, args.seed or 0)
    if dataset.images.shape[1] != cfg.resolution:
        raise InputError(
            f"dataset resolution {dataset.images.shape[1]} does not match "
            f"model resolution {cfg.resolution}"
        )
    report = training.train_toy(model, dataset, steps=args.steps,
                                batch_size=args.batch, lr=args.lr,
                                weight_decay=args.wd, seed=args.seed or 0)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "loss.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
        writer.writerows(report.steps)
    ckpt_path = os.path.join(args.out, "model.dvcp")
    data.save_checkpoint(model, ckpt_path)
    print(f"trained {len(report.steps)} steps in {report.wall_clock:.1f}s, "
          f"train accuracy {report.final_accuracy:.4f}")
    print(f"wrote {csv_path} and {ckpt_path}")
    if report.aborted:
        print("training aborted on non-finite loss; checkpoint holds last good state",
              file=sys.stderr)
        return CHECK_FAILURE
    return 0


def cmd_eval(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise InputError(f"checkpoint not found: {args.checkpoint}")
    model = data.load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data, model.config, args.per_class, args.seed or 0)
    acc = training.evaluate(model, dataset)
    if args.json:
        print(json.dumps({"accuracy": acc, "samples": len(dataset.labels)}))
    else:
        print(f"accuracy {acc:.4f} on {len(dataset.labels)} samples")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    rows = []
    for variant in DUAL_VARIANTS:
        model = build_model(cfg, variant=variant)
        report = complexity.count_macs(model, cfg.resolution)
        row = {"variant": variant, "params": report.params,
               "gmacs": report.macs / 1e9}
        if args.train_steps:
            dataset = data.make_synthetic(cfg.num_classes, args.per_class,
                                          cfg.resolution, seed=args.seed or 0)
            row["train_accuracy"] = training.train_toy(
                model, dataset, steps=args.train_steps, seed=args.seed or 0
            ).final_accuracy
        rows.append(row)
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    cols = list(rows[0].keys())
    print("  ".join(f"{c:>14}" for c in cols))
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(f"{v:>14.4f}" if isinstance(v, float) else f"{v:>14}")
        print("  ".join(cells))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualvit",
                                     description="Two-pathway vision transformer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="print the per-stage architecture table")
    _add_model_args(p)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_describe)

    p = sub.add_parser("count", help="analytic parameter and MAC report")
    _add_model_args(p)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--variant", choices=DUAL_VARIANTS, default="D")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_count)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--block", choices=("dual", "merge", "transformer", "model"),
                   default="dual")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train", help="toy-scale training run")
    _add_model_args(p)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--variant", choices=DUAL_VARIANTS, default="D")
    p.add_argument("--data", default="synthetic",
                   help="'synthetic' or path to a DVDS file")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--wd", type=float, default=0.05)
    p.add_argument("--per-class", type=int, default=8)
    p.add_argument("--out", default="runs/toy")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="synthetic")
    p.add_argument("--per-class", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="compare dual-block variants A-D")
    _add_model_args(p)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--train-steps", type=int, default=0,
                   help="optionally toy-train each variant this many steps")
    p.add_argument("--per-class", type=int, default=8)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InputError, ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except DualVitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CHECK_FAILURE


if __name__ == "__main__":
    sys.exit(main())
