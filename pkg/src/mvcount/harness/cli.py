"""Command-line entry point.

Failures print one line ``error <Kind>: <message>`` to stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import csv
import sys
from typing import List, Optional

import numpy as np

from mvcount.errors import ConfigError, DomainError, GenerationError, NonFiniteError, ShapeError
from mvcount.harness.config import ExperimentConfig, load_config
from mvcount.harness.data import make_sample
from mvcount.harness.evaluation import ablate, evaluate, inspect_weights, write_weight_csv
from mvcount.harness.protocols import gen_data, grad_check
from mvcount.harness.training import dtype_scope, load_model, train

GRAD_TOLERANCE = 1e-4


class GradientMismatch(RuntimeError):
    pass


EXIT_CODES = {ConfigError: 2, ShapeError: 3, DomainError: 3, GenerationError: 4, NonFiniteError: 5, GradientMismatch: 6}


def _config(path: Optional[str]) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def _read_points(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read points file {path}: {exc.strerror}") from exc
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    try:
        pts = np.array([[float(v) for v in r[:3]] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"points file {path}: {exc}") from exc
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"points file {path} needs rows of x,y,z")
    return pts


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def cmd_train(args) -> None:
    cfg = _config(args.config)
    result = train(cfg, args.out)
    print(f"checkpoint,{result.checkpoint}")
    print(f"final_loss,{result.losses[-1]!r}" if result.losses else "final_loss,")


def cmd_eval(args) -> None:
    model, cfg = load_model(args.ckpt)
    eval_cfg = load_config(args.config) if args.config else cfg
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    report = evaluate(model, cfg, views=args.views, perturb_deg=args.perturb_deg, perturb_m=args.perturb_m,
                      seeds=seeds, eval_cfg=eval_cfg, out_dir=args.out)
    print(",".join(["scene_mae", "scene_nae", "image_mae", "image_nae"]))
    print(",".join(repr(v) for v in (report.mae, report.nae, report.image_mae, report.image_nae)))


def cmd_ablate(args) -> None:
    cfg = _config(args.config)
    sets = ["" if t in ("-", "none") else t.strip().upper() for t in args.toggles.split(",")]
    reports = ablate(cfg, sets, args.out)
    print("toggles,mae,nae")
    for r in reports:
        print(f"{r.toggles or '-'},{r.mae!r},{r.nae!r}")


def cmd_grad_check(args) -> int:
    report = grad_check(_config(args.config), max_entries=args.max_entries)
    print("parameter,max_rel_error,checked,nonzero_grad")
    for name, err in report.max_rel_error.items():
        print(f"{name},{err!r},{report.checked[name]},{int(report.nonzero[name])}")
    if not report.passed(GRAD_TOLERANCE):
        raise GradientMismatch(f"max relative error {report.worst:.3e} exceeds {GRAD_TOLERANCE:g}")
    return 0


def cmd_inspect(args) -> None:
    model, cfg = load_model(args.ckpt)
    points = _read_points(args.points)
    seed = cfg.eval_seed if args.scene_seed is None else args.scene_seed
    with dtype_scope(cfg.np_dtype):
        sample = make_sample(cfg, seed, model.grids, args.views, dtype=cfg.np_dtype)
        readouts = inspect_weights(model, sample, points)
    if args.out:
        write_weight_csv(args.out, readouts)
    else:
        write_weight_csv(sys.stdout, readouts)


def cmd_gen_data(args) -> None:
    paths = gen_data(_config(args.config), args.out, args.count)
    print(f"scenes,{len(paths)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvcount", description="Multi-view counting experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--views", type=int)
    p.add_argument("--perturb-deg", type=float)
    p.add_argument("--perturb-m", type=float)
    p.add_argument("--seeds", help="comma-separated scene seeds")
    p.add_argument("--config", help="evaluation settings; the grid must match the checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate component subsets")
    p.add_argument("--config")
    p.add_argument("--toggles", required=True, help="comma-separated subsets of LVAI, '-' for none")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="compare backprop with finite differences on the micro pipeline")
    p.add_argument("--config")
    p.add_argument("--max-entries", type=int, default=200)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("inspect-weights", help="per-view aggregation weights at given points")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--points", required=True, help="CSV of x,y,z rows")
    p.add_argument("--scene-seed", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gen-data", help="export synthetic scenes in the raw-tensor format")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except Exception as exc:  # one machine-parsable line for every failure
        message = " ".join(str(exc).split())
        print(f"error {type(exc).__name__}: {message}", file=sys.stderr)
        return next((code for kind, code in EXIT_CODES.items() if isinstance(exc, kind)), 1)


if __name__ == "__main__":
    sys.exit(main())
