"""Report figures. Everything renders off-screen with the Agg backend and is
written as PNG without a software/date stamp, so reruns give identical bytes."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "svg.hashsalt": "proedge",
}
COLORS = {"baseline": "#7f7f7f", "hybrid": "#1f77b4", "val": "#ff7f0e"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def _smooth(y, width):
    y = np.asarray(y, dtype=float)
    if width <= 1 or len(y) < width:
        return y
    c = np.cumsum(np.insert(y, 0, 0.0))
    head = c[1:width] / np.arange(1, width)
    return np.concatenate([head, (c[width:] - c[:-width]) / width])


def plot_trace(trace, path, limit=500):
    """CPU channels and congestion over the first ``limit`` steps, arrivals as a rug."""
    with plt.rc_context(STYLE):
        fig, (ax, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 4.2),
                                      gridspec_kw={"height_ratios": [3, 1]})
        n = min(limit, trace.horizon)
        t = np.arange(n)
        for i in range(trace.cpu_series.shape[1]):
            ax.plot(t, trace.cpu_series[:n, i], lw=0.8, label=f"cpu_{i}")
        ax.plot(t, trace.net_series[:n], lw=0.8, color="k", alpha=0.6, label="net")
        ax.set_ylabel("load")
        ax.set_ylim(0, 1)
        ax.legend(ncol=5, loc="upper right", fontsize=7)
        times = [a.arrival_time for a in trace.arrivals if a.arrival_time < n]
        counts = np.bincount(times, minlength=n) if times else np.zeros(n)
        ax2.bar(t, counts, width=1.0, color=COLORS["hybrid"])
        ax2.set_ylabel("arrivals")
        ax2.set_xlabel("timestep")
        fig.tight_layout()
        return _save(fig, path)


def plot_loss_curve(curve, path, persistence=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(curve.epochs, curve.train_mse, label="train", color=COLORS["hybrid"])
        ax.plot(curve.epochs, curve.val_mse, label="validation", color=COLORS["val"])
        if persistence is not None:
            ax.axhline(persistence, ls="--", lw=0.8, color="k", label="persistence (val)")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("MSE")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def plot_learning_curves(reports: dict, path, smooth=10):
    """Per-episode total reward for each mode, raw (faint) and moving average."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for mode, rewards in reports.items():
            c = COLORS.get(mode)
            x = np.arange(1, len(rewards) + 1)
            ax.plot(x, rewards, color=c, alpha=0.25, lw=0.6)
            ax.plot(x, _smooth(rewards, smooth), color=c, label=mode)
        ax.set_xlabel("episode")
        ax.set_ylabel("total reward")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def plot_comparison(summary, path):
    """Hybrid relative to baseline for every metric (baseline = 1)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names, ratios, colors = [], [], []
        for r in summary.rows:
            names.append(r.metric)
            ratios.append(r.hybrid_mean / r.baseline if r.baseline else np.nan)
            colors.append(COLORS["hybrid"] if r.direction == "hybrid-better" else COLORS["baseline"])
        ax.bar(names, ratios, color=colors)
        ax.axhline(1.0, color="k", lw=0.8)
        ax.set_ylabel("hybrid / baseline")
        ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        return _save(fig, path)
