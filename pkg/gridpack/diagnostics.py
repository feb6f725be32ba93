from __future__ import annotations
import numpy as np
import pandas as pd
from scipy import stats
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import config


def _plot_path(name: str):
    config.PLOTS_DIR.mkdir(parents=True, exist_ok=True)
    return config.PLOTS_DIR / name


def distribution_report(series, label: str = "values") -> dict:
    """Summary statistics of a numeric column.

    Skewness and kurtosis come from scipy.stats.describe and need at least two
    values. Optionally saves a histogram.
    """
    x = pd.to_numeric(pd.Series(series).dropna(), errors="coerce").dropna().to_numpy(dtype=float)
    result = {
        "n": int(x.size),
        "mean": float(np.mean(x)) if x.size else None,
        "std": float(np.std(x, ddof=0)) if x.size else None,
        "min": float(x.min()) if x.size else None,
        "max": float(x.max()) if x.size else None,
        "p5": None,
        "p50": None,
        "p95": None,
        "skewness": None,
        "kurtosis": None,
    }
    if x.size:
        result["p5"], result["p50"], result["p95"] = (float(v) for v in np.percentile(x, [5, 50, 95]))
    if x.size >= 2 and np.ptp(x) > 0:
        d = stats.describe(x)
        result["skewness"] = float(d.skewness)
        result["kurtosis"] = float(d.kurtosis)

    if config.SAVE_PLOTS and x.size >= 2:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(x, bins=20, color="#4e79a7", edgecolor="white")
        ax.set_title(f"Histogram: {label}")
        fig.tight_layout()
        out_path = _plot_path(f"hist_{label.replace(' ', '_')}.png")
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
        result["plot_path"] = str(out_path)
    return result


def padding_diagnostics(table: pd.DataFrame, label: str = "padding") -> dict:
    """Distribution of per-batch waste for one strategy's batch table."""
    out = {
        "padded_fraction": distribution_report(table["padded_fraction"], label=f"{label}_padded_fraction"),
        "processed_pixels": distribution_report(table["processed_pixels"], label=f"{label}_processed_pixels"),
        "kind_counts": {str(k): int(v) for k, v in table["kind"].value_counts().items()},
    }
    larger = int(table["packed_over_stacked"].sum())
    out["packed_over_stacked"] = larger
    if larger:
        print(f"WARNING: {larger} of {len(table)} packing batches have a larger composite than LMBR stacking")
    return out


def stability_plot(trace: pd.DataFrame, name: str = "stability.png") -> str:
    """Max |memory| per step on a log axis, one line per (cell_kind, forget_bias)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for (kind, bias), grp in trace.groupby(["cell_kind", "forget_bias"]):
        y = grp["max_abs_memory"].to_numpy(dtype=float)
        ax.plot(grp["step"], np.where(np.isfinite(y), y, np.nan), label=f"{kind}, bias {bias:g}")
    ax.set_yscale("log")
    ax.set_xlabel("wavefront step")
    ax.set_ylabel("max |memory|")
    ax.legend()
    fig.tight_layout()
    out_path = _plot_path(name)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return str(out_path)
