"""Static figures written next to the CSV outputs (Agg backend, PNG)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated runs byte-identical
PNG_META = {"Software": None}
STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_META)
    plt.close(fig)


def lines(path, x, series: dict, xlabel: str, ylabel: str, title: str = "") -> None:
    """One line per entry of ``series`` (label -> y values)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, y in series.items():
            ax.plot(x, y, label=label, lw=1.2)
        ax.set(xlabel=xlabel, ylabel=ylabel, title=title)
        if len(series) > 1:
            ax.legend()
        _save(fig, path)


def fan(path, x, mean, lo, hi, samples, xlabel: str, ylabel: str, title: str = "") -> None:
    """Mean with a shaded band and a few sample paths."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.fill_between(x, lo, hi, color="tab:blue", alpha=0.2, lw=0, label="95% band")
        for row in np.atleast_2d(samples):
            ax.plot(x, row, lw=0.6, alpha=0.8)
        ax.plot(x, mean, color="k", lw=1.4, label="mean")
        ax.set(xlabel=xlabel, ylabel=ylabel, title=title)
        ax.legend()
        _save(fig, path)


def histogram(path, edges, counts, xlabel: str, title: str = "", zoom: tuple | None = None) -> None:
    """Bar histogram from precomputed bins, with an optional zoomed inset."""
    edges = np.asarray(edges)
    widths = np.diff(edges)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(edges[:-1], counts, width=widths, align="edge", color="tab:blue", alpha=0.8)
        ax.set(xlabel=xlabel, ylabel="paths", title=title)
        if zoom is not None:
            inset = ax.inset_axes([0.08, 0.45, 0.4, 0.45])
            keep = (edges[:-1] >= zoom[0]) & (edges[1:] <= zoom[1])
            inset.bar(edges[:-1][keep], np.asarray(counts)[keep], width=widths[keep], align="edge", color="tab:red")
            inset.set_title(f"{zoom[0]:g} to {zoom[1]:g}", fontsize=7)
            inset.tick_params(labelsize=6)
        _save(fig, path)


def heatmap(path, xs, ys, z, xlabel: str, ylabel: str, title: str = "", cbar: str = "") -> None:
    """``z[i, j]`` drawn at (xs[j], ys[i]); NaN cells are left blank."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        mesh = ax.pcolormesh(xs, ys, np.ma.masked_invalid(z), shading="nearest", cmap="viridis")
        fig.colorbar(mesh, ax=ax, label=cbar)
        ax.set(xlabel=xlabel, ylabel=ylabel, title=title)
        ax.grid(False)
        _save(fig, path)


def loglog(path, x, y, fit_y, xlabel: str, ylabel: str, title: str = "") -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(x, y, "o", ms=4, label="observed")
        ax.plot(x, fit_y, "-", lw=1.0, label="least squares")
        ax.set(xlabel=xlabel, ylabel=ylabel, title=title)
        ax.legend()
        _save(fig, path)
