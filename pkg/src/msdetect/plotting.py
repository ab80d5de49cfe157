"""Static figures for benchmark reports (files only, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from msdetect.calibrate import BenchReport  # noqa: E402
from msdetect.report import pivot  # noqa: E402


def plot_delays(report: BenchReport, path, title: str | None = None) -> Path | None:
    """Mean delay (with 2 s.e. bars) per rule against the scenario axis.

    The x axis is the number of affected streams, or the shift size for
    staggered suites.  Returns None for an empty report.
    """
    if not report.rows:
        return None
    path = Path(path)
    rules, cols, cells = pivot(report)
    staggered = all(c.startswith("mu=") for c in cols)
    numeric = staggered or all(c.isdigit() for c in cols)
    if staggered:
        xs = [float(c[3:]) for c in cols]
    elif numeric:
        xs = [int(c) for c in cols]
    else:
        xs = list(range(len(cols)))

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for r in rules:
        pts = [(x, cells[r, c]) for x, c in zip(xs, cols) if (r, c) in cells]
        ax.errorbar([p[0] for p in pts], [p[1].mean for p in pts],
                    yerr=[2 * p[1].se for p in pts], marker="o", ms=3, capsize=2, label=r)
    if numeric and not staggered and min(xs) > 0 and max(xs) / min(xs) >= 10:
        ax.set_xscale("log")
    if not numeric:
        ax.set_xticks(xs, cols, rotation=30)
    ax.set_yscale("log")
    ax.set_xlabel("shift mu (staggered)" if staggered else "affected streams #N")
    ax.set_ylabel("mean detection delay")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
