"""Rendering of plot-data tables to PNG files (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = ["render_timeseries", "render_rate", "render_speedup"]


def render_timeseries(ks, values, label: str, png_path: str) -> None:
    """Metric-vs-step curve on a log-scaled value axis."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    positive = values > 0
    if positive.any():
        ax.semilogy(ks[positive], values[positive], lw=1.2)
    else:
        ax.plot(ks, values, lw=1.2)
    ax.set_xlabel("step k")
    ax.set_ylabel(label)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def render_rate(
    log_ts, log_vals, stderrs, slope: float | None, intercept: float | None,
    label: str, png_path: str,
) -> None:
    """Log-log rate points with standard errors and the fitted line."""
    fig, ax = plt.subplots(figsize=(6, 4))
    log_ts = np.asarray(log_ts, dtype=float)
    log_vals = np.asarray(log_vals, dtype=float)
    ax.errorbar(log_ts, log_vals, yerr=np.asarray(stderrs, dtype=float),
                fmt="o", capsize=3, label="measured")
    if slope is not None and intercept is not None:
        xs = np.linspace(log_ts.min(), log_ts.max(), 50)
        ax.plot(xs, intercept + slope * xs, "--", label=f"slope {slope:.3f}")
        ax.legend()
    ax.set_xlabel("log T")
    ax.set_ylabel(f"log {label}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def render_speedup(ns, ratios, png_path: str) -> None:
    """Speedup ratio against network size, with the ideal linear line."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ns = np.asarray(ns, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    ax.plot(ns, ratios, "o-", label="measured")
    ax.plot(ns, ns / ns.min(), "--", alpha=0.6, label="ideal linear")
    ax.set_xlabel("agents n")
    ax.set_ylabel("speedup vs smallest n")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
