"""Figure rendering for evaluation reports.

Renders the Lorenz curve and the relative-premium-difference histogram
to image files next to the delimited report.  The text report remains
the interface; figures are a convenience for review.  Matplotlib is
imported lazily with the Agg backend so headless runs work.
"""

from __future__ import annotations

import numpy as np


def _axes():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_lorenz_figure(points, path: str, *, title: str = "Lorenz curve"):
    """Lorenz curve against the line of equality."""
    plt = _axes()
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], color="grey", linestyle="--", linewidth=1,
            label="line of equality")
    ax.plot(xs, ys, color="tab:blue", linewidth=1.5, label="model")
    ax.set_xlabel("cumulative share (ranked by predicted rate, high to low)")
    ax.set_ylabel("cumulative observed damage share")
    ax.set_title(title)
    ax.legend(loc="lower right")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_premium_diff_figure(ratios, path: str, *,
                             title: str = "Relative premium differences"):
    """Histogram of per-record relative differences against the benchmark."""
    plt = _axes()
    values = np.asarray(ratios, dtype=float)
    values = values[~np.isnan(values)]
    fig, ax = plt.subplots(figsize=(6, 4))
    if values.size:
        ax.hist(values, bins=min(60, max(10, values.size // 20 + 10)),
                color="tab:blue", edgecolor="white")
        ax.axvline(0.0, color="grey", linestyle="--", linewidth=1)
    ax.set_xlabel("(candidate - benchmark) / benchmark")
    ax.set_ylabel("records")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
