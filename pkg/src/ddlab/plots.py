"""Figure rendering for the report paths: every CSV the CLI emits gets a
matching PNG next to it."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["render_sweep", "render_grid"]


def render_sweep(result, axis: str, path) -> Path:
    """Median-and-spread trend of the sweep readout vs the axis value, with
    the null-sweep noise floor drawn as a reference line."""
    by_value = {}
    for row in result.rows:
        if not math.isnan(row["w1"]):
            by_value.setdefault(row["axis_value"], []).append(row["w1"])
    values = sorted(by_value)
    med = [float(np.median(by_value[v])) for v in values]
    lo = [float(np.quantile(by_value[v], 0.25)) for v in values]
    hi = [float(np.quantile(by_value[v], 0.75)) for v in values]

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.fill_between(values, lo, hi, alpha=0.25, lw=0, label="IQR")
    ax.plot(values, med, "o-", label="median W1")
    ax.axhline(result.noise_floor["median"], ls="--", c="gray",
               label="null-sweep floor")
    if all(v > 0 for v in values):
        ax.set_xscale("log")
    if all(m > 0 for m in med + [result.noise_floor["median"]]):
        ax.set_yscale("log")
    ax.set_xlabel(axis)
    ax.set_ylabel("W1 to reference cloud")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_grid(grid_result: dict, path) -> Path:
    """Heatmap(s) of the score norm (and error norm, if present) over the
    (t, x1) plane, log-scaled color since both blow up near t = 0."""
    has_err = grid_result["norm_error"] is not None
    ncols = 2 if has_err else 1
    fig, axes = plt.subplots(1, ncols, figsize=(4.6 * ncols, 3.6),
                             squeeze=False)
    panels = [("norm_score", "|score|")]
    if has_err:
        panels.append(("norm_error", "|score error|"))
    for ax, (key, label) in zip(axes[0], panels):
        data = np.maximum(grid_result[key], 1e-12)
        pcm = ax.pcolormesh(grid_result["t"], grid_result["x1"], data,
                            norm=matplotlib.colors.LogNorm(), shading="auto")
        fig.colorbar(pcm, ax=ax, label=label)
        ax.set_xlabel("t")
        ax.set_ylabel("x1")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
