"""Figure rendering for the CLI report paths.

Everything draws onto the Agg backend and writes straight to a file, so
nothing here needs a display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .temporal_graph import Histogram  # noqa: E402

__all__ = ["plot_histogram", "plot_instability", "plot_loss_curve"]

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_histogram(hist: Histogram, path, labels=None, title: str | None = None) -> None:
    """Zero / mid / high composition bars next to the nonzero bucket histogram.

    ``labels`` (raw values) are optional; without them the mid/high split is
    approximated from the bucket midpoints.
    """
    edges = np.asarray(hist.bucket_edges, dtype=np.float64)
    counts = np.asarray(hist.bucket_counts, dtype=np.int64)
    if labels is not None:
        y = np.asarray(getattr(labels, "values", labels), dtype=np.float64)
        nz = y[y != 0]
        med = np.median(nz) if nz.size else 0.0
        mid, high = int(np.sum(nz <= med)), int(np.sum(nz > med))
    else:
        centers = 0.5 * (edges[:-1] + edges[1:])
        med = np.median(np.repeat(centers, counts)) if counts.sum() else 0.0
        mid, high = int(counts[centers <= med].sum()), int(counts[centers > med].sum())
    total = max(hist.total, 1)
    with plt.rc_context(_STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(7.0, 2.8), gridspec_kw={"width_ratios": [1, 2]})
        parts = [hist.zero_count, mid, high]
        bars = ax0.bar(["zero", "mid", "high"], [p / total for p in parts],
                       color=["0.6", "tab:blue", "tab:red"])
        for bar, p in zip(bars, parts):
            ax0.annotate(f"{p / total:.1%}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                         ha="center", va="bottom", fontsize=7)
        ax0.set_ylabel("fraction of nodes")
        ax0.set_ylim(0, 1.08)
        widths = np.diff(edges)
        if counts.sum():
            ax1.bar(edges[:-1], counts, width=widths, align="edge", color="tab:blue", edgecolor="k", lw=0.4)
            nz = counts[counts > 0]
            if nz.max() >= 20 * nz.min():
                ax1.set_yscale("log")
        ax1.set_xlabel("TBC (nonzero)")
        ax1.set_ylabel("count")
        if title:
            fig.suptitle(title)
        _save(fig, path)


def plot_instability(trace: dict, k_hat: int, path) -> None:
    ks = sorted(int(k) for k in trace)
    vals = [trace[k] if k in trace else trace[str(k)] for k in ks]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        ax.plot(ks, vals, "o-", color="k", ms=3, lw=1)
        if k_hat in ks:
            ax.plot([k_hat], [vals[ks.index(k_hat)]], "o", color="tab:red", ms=6, label=f"k = {k_hat}")
            ax.legend(frameon=False)
        ax.set_xlabel("k")
        ax.set_ylabel("instability")
        ax.set_xticks(ks)
        _save(fig, path)


def plot_loss_curve(loss_trace: list, path) -> None:
    epochs = [row["epoch"] for row in loss_trace]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 2.8))
        for key, style in (("total", "k-"), ("regress", "b--"), ("contrast", "r:")):
            vals = [row[key] for row in loss_trace]
            if any(vals):
                ax.plot(epochs, vals, style, lw=1.2, label=key)
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss per graph")
        ax.legend(frameon=False)
        _save(fig, path)
