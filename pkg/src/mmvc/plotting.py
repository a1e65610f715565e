"""Figure presets and the per-label GAP chart written by ``mmvc score --per-label``.

Figures are rendered with the Agg backend and without a Software/date
stamp, so rerunning a command rewrites byte-identical PNGs.
"""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PALETTE = ["#0072B2", "#D55E00", "#009E73", "#CC79A7", "#E69F00", "#56B4E9", "#000000"]

REPORT_RC = {
    "figure.figsize": (8.0, 3.6),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.titlelocation": "left",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.prop_cycle": plt.cycler(color=PALETTE),
    "axes.grid": True,
    "grid.alpha": 0.25,
    "grid.linewidth": 0.5,
    "xtick.direction": "out",
    "ytick.direction": "out",
    "legend.frameon": False,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "mmvc",
}

# PNG metadata that would otherwise differ between matplotlib builds
_PNG_META = {"Software": None}


@contextmanager
def report_style():
    with plt.rc_context(REPORT_RC):
        yield


def plot_per_label_gap(rows, path, title="Per-label GAP, labels ranked by frequency"):
    """Draw per-label GAP against label frequency rank.

    ``rows`` are dicts with ``rank``, ``positives`` and ``gap`` in rank
    order (most frequent label first).  Positive counts go on a twin axis,
    log-scaled when they span more than a factor of 50.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to plot: no label has a positive example")
    ranks = [r["rank"] for r in rows]
    gaps = [r["gap"] for r in rows]
    counts = [r["positives"] for r in rows]
    path = Path(path)
    with report_style():
        fig, ax = plt.subplots()
        ax.plot(ranks, gaps, marker="o" if len(rows) <= 60 else None, ms=3, color=PALETTE[0], label="GAP")
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("label rank by frequency")
        ax.set_ylabel("GAP")
        ax.set_title(title)
        twin = ax.twinx()
        twin.bar(ranks, counts, width=1.0, color=PALETTE[4], alpha=0.25, label="positives")
        log_scale = max(counts) > 50 * max(min(counts), 1)
        if log_scale:
            twin.set_yscale("log")
        twin.set_ylabel("positives (log)" if log_scale else "positives")
        twin.spines["right"].set_visible(True)
        twin.grid(False)
        ax.set_zorder(twin.get_zorder() + 1)
        ax.patch.set_visible(False)
        h1, l1 = ax.get_legend_handles_labels()
        h2, l2 = twin.get_legend_handles_labels()
        ax.legend(h1 + h2, l1 + l2, loc="upper right")
        fig.tight_layout()
        fig.savefig(path, format="png", metadata=_PNG_META)
        plt.close(fig)
    return path
