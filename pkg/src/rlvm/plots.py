"""SVG charts for method comparisons.

Figures are rendered with the Agg backend and saved without a creation
date and with a fixed hash salt, so identical data gives identical files.
"""

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .files import atomic_write  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "rlvm"


def _save(fig, path):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return atomic_write(path, buf.getvalue())


def bar_chart(path, groups, methods, values, title, ylabel, log=False):
    """Grouped bars: one group per request, one bar per method.

    ``values`` maps ``(group, method)`` to a number; missing cells are left empty.
    """
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(groups), 3.6))
    x = np.arange(len(groups))
    width = 0.8 / max(len(methods), 1)
    for k, method in enumerate(methods):
        heights = [values.get((g, method), np.nan) for g in groups]
        ax.bar(x + (k - (len(methods) - 1) / 2) * width, heights, width, label=method)
    ax.set_xticks(x, groups)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if log:
        ax.set_yscale("symlog", linthresh=1e-7)
    ax.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def line_chart(path, series, title, ylabel, xlabel="slot"):
    """One line per entry of ``series`` (label -> sequence of y values)."""
    fig, ax = plt.subplots(figsize=(7.0, 3.4))
    for label, ys in series.items():
        ax.plot(np.arange(len(ys)), ys, label=label, linewidth=1.0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)
