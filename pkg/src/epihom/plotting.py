"""Deterministic SVG line plots."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SVG_METADATA = {"Date": None, "Creator": None}


def line_plot(path, x, series, xlabel, ylabel, title=None, logx=False, markers=True):
    """``series`` maps label -> y values; writes one SVG with fixed ids and no timestamp."""
    with matplotlib.rc_context({"svg.hashsalt": "epihom", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for label, y in series.items():
            ax.plot(x, y, marker="o" if markers else None, ms=3, lw=1.2, label=label)
        if logx:
            ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend(frameon=False)
        ax.grid(True, lw=0.3, alpha=0.5)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
        plt.close(fig)
