"""Plot-ready tables derived from evaluate outputs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import storage
from .conformal import empirical_coverage


@dataclass
class ReportTables:
    bin_edges: np.ndarray
    calibrated_counts: np.ndarray
    raw_counts: np.ndarray
    rows: dict  # parsed report.csv
    raw_coverage: np.ndarray
    target: float
    best: int
    worst: int
    fields: dict
    z: float


def coverage_histogram(coverage, bins=20):
    """Counts over equal-width bins on [0, 1]; 1.0 falls in the top bin."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(np.asarray(coverage, dtype=np.float64), bins=edges)
    return edges, counts


def select_best_worst(coverage, error):
    """Indices of the highest- and lowest-coverage samples; ties go to the lower error."""
    ids = range(len(coverage))
    best = min(ids, key=lambda i: (-coverage[i], error[i], i))
    worst = min(ids, key=lambda i: (coverage[i], error[i], i))
    return best, worst


def build_report_tables(out_dir, bins=20, target=0.95) -> ReportTables:
    out = Path(out_dir)
    rows = storage.read_report_csv(out / "report.csv")
    fields, manifest = storage.load_fields(out / "fields")
    z = manifest["z"]
    raw_cov = empirical_coverage(fields["truth"], fields["mean"] - z * fields["std"],
                                 fields["mean"] + z * fields["std"])
    edges, cal_counts = coverage_histogram(rows["coverage"], bins)
    _, raw_counts = coverage_histogram(raw_cov, bins)
    best, worst = select_best_worst(rows["coverage"], rows["mean_rel_err_pct"])
    return ReportTables(edges, cal_counts, raw_counts, rows, raw_cov, target, best, worst, fields, z)


def write_report_tables(out_dir, t: ReportTables):
    out = Path(out_dir)
    written = []
    p = out / "coverage_histogram.csv"
    storage.write_csv(p, ("bin_lo", "bin_hi", "calibrated_count", "raw_mc_count"),
                      zip(t.bin_edges[:-1], t.bin_edges[1:], t.calibrated_counts, t.raw_counts))
    written.append(p)

    p = out / "failure_vs_error.csv"
    r = t.rows
    storage.write_csv(p, ("sample_id", "failure_rate_pct", "mean_rel_err_pct", "coverage",
                          "below_target"),
                      zip(r["sample_id"], r["failure_rate_pct"], r["mean_rel_err_pct"],
                          r["coverage"], r["coverage"] < t.target))
    written.append(p)

    coords = t.fields["coords"]
    coord_cols = tuple(f"coord{k}" for k in range(coords.shape[1]))
    for label, idx in (("best", t.best), ("worst", t.worst)):
        p = out / f"{label}_sample.csv"
        cols = [t.fields[name][idx] for name in ("truth", "mean", "lower", "upper")]
        storage.write_csv(p, ("sample_id",) + coord_cols + ("truth", "mean", "lower", "upper"),
                          ((idx, *c, *v) for c, v in zip(coords, zip(*cols))))
        written.append(p)
    return written
