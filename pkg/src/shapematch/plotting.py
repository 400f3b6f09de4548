"""Report figures rendered to PNG files next to the JSON/CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "shapematch",
}


def _save(fig, path):
    # no Software/date metadata so reruns are byte-identical
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def plot_trace(path, traces: dict, title: str = "", logy: bool = True):
    """Loss traces (one line per label) against iteration."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        for label, tr in traces.items():
            ax.plot(range(len(tr)), tr, lw=1.2, label=label)
        if logy and all(min(tr) > 0 for tr in traces.values() if len(tr)):
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        if title:
            ax.set_title(title)
        if len(traces) > 1:
            ax.legend(frameon=False)
        _save(fig, path)


def plot_curves(path, curves: dict, xlabel: str, ylabel: str, xmax: float | None = None):
    """Cumulative curves given as ``{label: [(x, y), ...]}``; legend carries AUC when labelled so."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.2))
        for label, pts in curves.items():
            xs, ys = zip(*pts) if pts else ((), ())
            ax.plot(xs, ys, lw=1.5, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_ylim(0.0, 1.02)
        if xmax:
            ax.set_xlim(0.0, xmax)
        ax.legend(frameon=False, loc="lower right")
        _save(fig, path)


def plot_series(path, xs, series: dict, xlabel: str, ylabel: str):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        for label, ys in series.items():
            ax.plot(xs, ys, marker="o", ms=3, lw=1.2, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        _save(fig, path)
