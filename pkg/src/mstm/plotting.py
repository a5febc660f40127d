"""Metric-vs-timestep line plots with a shaded +/-1 sigma band, rendered to PNG."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed style so repeated renders are byte-identical
STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "savefig.dpi": 100,
    "svg.hashsalt": "mstm",
}
PNG_METADATA = {"Software": None}


def band_limits(mean, std):
    """Lower and upper edges of the shaded band (half-width = std)."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    return mean - std, mean + std


def plot_curve(ax, x, mean, std, label=None, color=None):
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    lo, hi = band_limits(mean, std)
    (line,) = ax.plot(x, mean, marker="o" if x.size == 1 else None, ms=3, label=label, color=color)
    ax.fill_between(x, lo, hi, color=line.get_color(), alpha=0.25, linewidth=0)
    return line


def render_metric(path, x, mean, std, metric, title=None):
    """One metric against timestep; writes a PNG at ``path``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        plot_curve(ax, x, mean, std)
        ax.set_xlabel("timestep")
        ax.set_ylabel(metric)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, format="png", metadata=PNG_METADATA)
        plt.close(fig)


def render_qoi(path, field, x, series):
    """Masked-QoI row: means (truth and prediction), mean |diff| and relative RMSE.

    ``series`` maps column names (``mean_g``, ``mean_g_std`` ...) to arrays.
    """
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10.0, 3.0))
        plot_curve(axes[0], x, series["mean_g"], series["mean_g_std"], label="truth")
        plot_curve(axes[0], x, series["mean_p"], series["mean_p_std"], label="prediction")
        axes[0].legend(frameon=False)
        axes[0].set_ylabel(f"masked mean {field}")
        plot_curve(axes[1], x, series["diff_mean"], series["diff_mean_std"])
        axes[1].set_ylabel("mean |difference|")
        plot_curve(axes[2], x, series["rel_rmse"], series["rel_rmse_std"])
        axes[2].set_ylabel("relative RMSE")
        for ax in axes:
            ax.set_xlabel("timestep")
        fig.tight_layout()
        fig.savefig(path, format="png", metadata=PNG_METADATA)
        plt.close(fig)
