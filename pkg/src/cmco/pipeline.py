"""The five pipeline stages as library functions operating on a PipelineConfig.

Each stage reads the previous stage's files from the configured paths and
writes its own, so the CLI is a thin wrapper and tests can drive the same
code in-process.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import conformal as cp
from . import storage
from .config import PipelineConfig
from .deeponet import build_model, parameter_count
from .errors import ConfigError
from .nn import RngStream
from .report import build_report_tables, write_report_tables
from .tasks import generate, split_dataset
from .training import fit, predict_point, relative_l2

log = logging.getLogger(__name__)

SPLITS = ("train", "calibration", "test")
_INIT_STREAM = 7


def run_gen(cfg: PipelineConfig):
    cfg.validate()
    data = generate(cfg.task)
    out = Path(cfg.paths.data)
    for part in split_dataset(data, cfg.split, cfg.seed):
        storage.save_dataset(part, out / part.role)
    log.info("wrote %d samples to %s", len(data), out)
    return out


def _load_split(cfg, role):
    return storage.load_dataset(Path(cfg.paths.data) / role, role=role)


def run_train(cfg: PipelineConfig, progress=None):
    cfg.validate()
    train = _load_split(cfg, "train")
    model = build_model(cfg.branch, cfg.trunk, RngStream(cfg.seed, _INIT_STREAM))
    model, history = fit(model, train, cfg.train, progress)
    ckpt = Path(cfg.paths.ckpt)
    storage.save_checkpoint(model, ckpt)
    storage.write_loss_history(ckpt / "loss_history.csv", history)
    log.info("trained %d parameters for %d epochs", parameter_count(model), len(history))
    return model, history


def run_calibrate(cfg: PipelineConfig):
    cfg.validate()
    model = storage.load_checkpoint(cfg.paths.ckpt)
    cal = _load_split(cfg, "calibration")
    uq = cfg.uq
    calib, _ = cp.calibrate(model, cal.branch_inputs, cal.fields, cal.grid, uq.alpha, uq.z,
                            uq.n_c, cfg.seed, uq.sigma_floor)
    storage.save_calibration(calib, cfg.paths.calib)
    return calib


def run_evaluate(cfg: PipelineConfig):
    """Per-sample interval report, coverage summary and field dumps."""
    cfg.validate()
    uq = cfg.uq
    model = storage.load_checkpoint(cfg.paths.ckpt)
    calib = storage.load_calibration(cfg.paths.calib)
    storage.check_provenance(calib, uq.alpha, uq.z, uq.n_c)
    test = _load_split(cfg, "test")
    if calib.q.shape[0] != test.fields.shape[1]:
        raise ConfigError(f"calibration has {calib.q.shape[0]} points, test split {test.fields.shape[1]}")

    stats = cp.mc_predict(model, test.branch_inputs, test.grid, calib.n_c, calib.mc_seed,
                          retain_samples=False)
    report = cp.evaluate_intervals(test.fields, stats, calib, eps=uq.rel_err_eps,
                                   failure_threshold=uq.failure_threshold_pct,
                                   error_threshold=uq.error_threshold_pct)
    raw_lo, raw_hi = cp.raw_intervals(stats, calib.z)
    raw_cov = cp.empirical_coverage(test.fields, raw_lo, raw_hi)
    point = predict_point(model, test)

    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    storage.write_report_csv(out / "report.csv", report)
    summary = {
        "format_version": storage.FORMAT_VERSION,
        "task": cfg.task.kind,
        "alpha": calib.alpha, "z": calib.z, "n_c": calib.n_c, "n_cal": calib.n_cal,
        "calibrated": cp.coverage_summary(report.coverage, 1.0 - calib.alpha),
        "raw_mc_dropout": cp.coverage_summary(raw_cov, 1.0 - calib.alpha),
        "relative_l2_pct": 100.0 * relative_l2(point, test.fields),
        "mae": float(np.mean(np.abs(point - test.fields))),
        "rmse": float(np.sqrt(np.mean((point - test.fields) ** 2))),
        "mean_rel_err_pct_average": float(np.mean(report.mean_rel_err_pct)),
        "outlier_count": int(report.outlier.sum()),
        "mean_interval_width": float(np.mean(report.upper - report.lower)),
    }
    storage.write_json(out / "summary.json", summary)
    storage.save_fields(out / "fields", test.grid, {
        "truth": test.fields, "mean": stats.mean, "std": stats.std,
        "lower": report.lower, "upper": report.upper,
    }, extra={"z": calib.z})
    return report, summary


def run_report(cfg: PipelineConfig, figures=True):
    out = Path(cfg.paths.out)
    for name in ("report.csv", "summary.json", "fields/manifest.json"):
        if not (out / name).is_file():
            raise ConfigError(f"missing evaluate output {out / name}; run evaluate first")
    tables = build_report_tables(out, bins=cfg.uq.histogram_bins,
                                 target=1.0 - storage.read_json(out / "summary.json")["alpha"])
    written = write_report_tables(out, tables)
    if figures:
        from .plotting import render_figures
        written += render_figures(out, tables)
    return written
