"""PNG figures written next to CSV outputs.  Always uses the Agg backend."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def figsize(scale: float = 1.0, aspect: float = 0.62) -> tuple[float, float]:
    width = 5.0 * scale
    return width, width * aspect


def line_plot(path, x, series: dict, xlabel: str, ylabel: str, logx: bool = False,
              logy: bool = False, title: str | None = None, slope: tuple | None = None,
              markers: bool = True) -> None:
    """One or more curves sharing an x axis.

    ``slope`` is an optional ``(exponent, label)`` reference line anchored at
    the first curve's last point.
    """
    x = np.asarray(x, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        for label, y in series.items():
            y = np.asarray(y, dtype=float)
            ok = np.isfinite(y) & (y > 0 if logy else True) & (x > 0 if logx else True)
            ax.plot(x[ok], y[ok], "o-" if markers and ok.sum() < 40 else "-", ms=3, lw=1,
                    label=label)
        if slope is not None and series:
            y0 = np.asarray(next(iter(series.values())), dtype=float)
            ok = np.isfinite(y0) & (y0 > 0) & (x > 0)
            if ok.any():
                xs, ys = x[ok], y0[ok]
                ref = ys[-1] * (xs / xs[-1]) ** slope[0]
                ax.plot(xs, ref, "k--", lw=0.8, label=slope[1])
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1 or slope is not None:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def bar_plot(path, labels, values, xlabel: str, ylabel: str, title: str | None = None) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        vals = [v if math.isfinite(v) else 0.0 for v in values]
        ax.bar([str(l) for l in labels], vals, color="0.4")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
