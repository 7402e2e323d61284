"""Matplotlib figures rendered next to the report CSVs.

Figures are written with the non-interactive Agg backend and fixed
metadata so reruns produce the same bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

CALIBRATED = "#1f77b4"
RAW = "0.6"
OK = "#2ca02c"
UNDER = "#ff7f0e"

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def coverage_histogram_figure(t, path):
    width = np.diff(t.bin_edges) * 100
    left = t.bin_edges[:-1] * 100
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    ax.bar(left, t.raw_counts, width=width, align="edge", color=RAW, alpha=0.7,
           label="MC dropout (uncalibrated)")
    ax.bar(left, t.calibrated_counts, width=width, align="edge", color=CALIBRATED, alpha=0.6,
           label="conformalized")
    ax.axvline(100 * t.target, color="k", ls="--", lw=0.8)
    ax.set_xlabel("empirical coverage (%)")
    ax.set_ylabel("test samples")
    ax.legend(frameon=False, loc="upper left")
    return _save(fig, path)


def failure_vs_error_figure(t, path):
    r = t.rows
    below = r["coverage"] < t.target
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    ax.scatter(r["mean_rel_err_pct"][~below], r["failure_rate_pct"][~below], s=10, color=OK,
               label=f">= {100 * t.target:g}% coverage")
    ax.scatter(r["mean_rel_err_pct"][below], r["failure_rate_pct"][below], s=10, color=UNDER,
               label=f"< {100 * t.target:g}% coverage")
    ax.set_xlabel("mean relative error (%)")
    ax.set_ylabel("failure rate (%)")
    if np.all(r["mean_rel_err_pct"] > 0) and r["mean_rel_err_pct"].max() / r["mean_rel_err_pct"].min() > 100:
        ax.set_xscale("log")
    ax.legend(frameon=False)
    return _save(fig, path)


def _field_panel_1d(ax, x, f, idx, title):
    order = np.argsort(x)
    x = x[order]
    ax.fill_between(x, f["lower"][idx][order], f["upper"][idx][order], color=CALIBRATED,
                    alpha=0.25, lw=0, label="calibrated interval")
    ax.plot(x, f["truth"][idx][order], "k-", lw=1.0, label="truth")
    ax.plot(x, f["mean"][idx][order], "--", color=CALIBRATED, lw=1.0, label="MC mean")
    ax.set_title(title)
    ax.set_xlabel("x")


def fields_figure(t, path):
    f = t.fields
    coords = f["coords"]
    cov = t.rows["coverage"]
    err = t.rows["mean_rel_err_pct"]
    picks = (("best", t.best), ("worst", t.worst))
    if coords.shape[1] == 1:
        fig, axes = plt.subplots(1, 2, figsize=(7.5, 2.8), sharey=True)
        for ax, (label, idx) in zip(axes, picks):
            _field_panel_1d(ax, coords[:, 0], f, idx,
                            f"{label}: coverage {100 * cov[idx]:.1f}%, error {err[idx]:.1f}%")
        axes[0].legend(frameon=False)
        return _save(fig, path)

    fig, axes = plt.subplots(2, 4, figsize=(11, 5), constrained_layout=True)
    for row, (label, idx) in zip(axes, picks):
        panels = (("truth", f["truth"][idx]), ("mean", f["mean"][idx]),
                  ("lower", f["lower"][idx]), ("upper", f["upper"][idx]))
        lo = min(p[1].min() for p in panels)
        hi = max(p[1].max() for p in panels)
        for ax, (name, vals) in zip(row, panels):
            sc = ax.scatter(coords[:, 0], coords[:, 1], c=vals, s=8, vmin=lo, vmax=hi, cmap="viridis")
            ax.set_title(f"{label} {name}")
            ax.set_aspect("equal")
        fig.colorbar(sc, ax=row, shrink=0.8)
    return _save(fig, path)


def render_figures(out_dir, tables):
    out = Path(out_dir)
    with plt.rc_context(_RC):
        return [
            coverage_histogram_figure(tables, out / "coverage_histogram.png"),
            failure_vs_error_figure(tables, out / "failure_vs_error.png"),
            fields_figure(tables, out / "best_worst_fields.png"),
        ]
