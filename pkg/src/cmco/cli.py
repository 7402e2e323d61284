"""Command line entry point: ``cmco {gen,train,calibrate,evaluate,report,run}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 calibration provenance mismatch.  BLAS threads are limited to
``$CMCO_NUM_THREADS`` (default 1) so runs stay bit-reproducible.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import pipeline
from .config import PRESETS, from_dict
from .errors import CMCOError, ConfigError

log = logging.getLogger("cmco")

STAGES = ("gen", "train", "calibrate", "evaluate", "report")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config (may name a preset)")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in config (default antiderivative)")
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--z", type=float)
    common.add_argument("--passes", type=int, help="MC-dropout passes n_c")
    common.add_argument("--epochs", type=int)
    common.add_argument("--data", help="dataset directory")
    common.add_argument("--ckpt", help="checkpoint directory")
    common.add_argument("--calib", help="calibration artifact directory")
    common.add_argument("--out", help="report directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cmco", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate and split a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train the operator on the train split")
    sub.add_parser("calibrate", parents=[common], help="fit conformal quantiles on the calibration split")
    sub.add_parser("evaluate", parents=[common], help="interval report on the test split")
    rp = sub.add_parser("report", parents=[common], help="plot-ready tables and figures")
    rp.add_argument("--no-figures", action="store_true", help="write CSV tables only")
    sub.add_parser("run", parents=[common], help="all stages in order")
    return p


def load_config(args):
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if args.preset:
        raw["preset"] = args.preset
    if not args.config and "preset" not in raw:
        raw["preset"] = "antiderivative"
    if args.seed is not None:
        raw["seed"] = args.seed
    paths = dict(raw.get("paths", {}))
    for key in ("data", "ckpt", "calib", "out"):
        if getattr(args, key):
            paths[key] = getattr(args, key)
    raw["paths"] = paths
    uq = dict(raw.get("uq", {}))
    for flag, key in (("alpha", "alpha"), ("z", "z"), ("passes", "n_c")):
        if getattr(args, flag) is not None:
            uq[key] = getattr(args, flag)
    raw["uq"] = uq
    if args.epochs is not None:
        raw["train"] = {**raw.get("train", {}), "epochs": args.epochs}
    return from_dict(raw).validate()


def _run_stage(stage, cfg, args):
    if stage == "gen":
        print(f"gen: wrote {pipeline.run_gen(cfg)}")
    elif stage == "train":
        progress = (lambda e, lr, loss: log.info("epoch %d lr %.3g loss %.6g", e, lr, loss))
        _, history = pipeline.run_train(cfg, progress)
        last = f", final loss {history[-1][2]:.6g}" if history else ""
        print(f"train: {len(history)} epochs{last} -> {cfg.paths.ckpt}")
    elif stage == "calibrate":
        calib = pipeline.run_calibrate(cfg)
        print(f"calibrate: q over {calib.q.size} points, median {float(sorted(calib.q)[calib.q.size // 2]):.4g}"
              f" -> {cfg.paths.calib}")
    elif stage == "evaluate":
        _, s = pipeline.run_evaluate(cfg)
        c = s["calibrated"]
        print(f"evaluate: coverage avg {c['average_coverage_pct']:.2f}% min {c['min_coverage_pct']:.2f}% "
              f"max {c['max_coverage_pct']:.2f}%, >=target {c['count_ge_target']}, "
              f"<target {c['count_lt_target']}, relative L2 {s['relative_l2_pct']:.2f}%")
    elif stage == "report":
        files = pipeline.run_report(cfg, figures=not getattr(args, "no_figures", False))
        print("report: " + ", ".join(str(f) for f in files))


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = int(os.environ.get("CMCO_NUM_THREADS", "1"))
    try:
        cfg = load_config(args)
        stages = STAGES if args.command == "run" else (args.command,)
        with threadpool_limits(limits=threads):
            for stage in stages:
                _run_stage(stage, cfg, args)
    except CMCOError as exc:
        print(f"cmco {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
