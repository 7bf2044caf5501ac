"""PNG figures written next to the tab-separated results.

Figures are built on a bare ``Figure`` with the Agg canvas so nothing
touches pyplot's global state, which keeps parallel workflows safe.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

# fixed metadata keeps reruns byte-identical
_PNG_METADATA = {"Software": "pwhetero"}


def _save(fig, path):
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)


def plot_bands(bands, path, title=""):
    """Bands (eV, E_F = 0) along the path with node labels on the x axis.

    Args:
        bands: a BandStructure.
        path: output PNG file.
    """
    fig = Figure(figsize=(5, 6))
    ax = fig.add_subplot(111)
    x = bands.path.cumulative_distance
    for band in bands.energies.T:
        ax.plot(x, band, color="tab:blue", lw=1.0)
    ticks = [x[i] for i in bands.path.node_indices]
    for t in ticks:
        ax.axvline(t, color="0.6", lw=0.6)
    ax.axhline(0.0, color="k", ls="--", lw=0.6)
    ax.set_xticks(ticks)
    ax.set_xticklabels(["Γ" if lbl == "G" else lbl for lbl in bands.path.labels])
    ax.set_xlim(x[0], x[-1])
    ax.set_ylabel("E - E_F (eV)")
    ax.set_title(title)
    _save(fig, path)


def plot_curves(energies, curves, path, xlabel="E - E_F (eV)", ylabel="states / eV", title=""):
    """One line per named curve; ``curves`` maps label -> values."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(111)
    for label, values in curves.items():
        ax.plot(energies, values, lw=1.0, label=label)
    ax.axvline(0.0, color="k", ls="--", lw=0.6)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(curves) > 1:
        ax.legend(fontsize="small")
    ax.set_title(title)
    _save(fig, path)


def plot_xy(x, y, path, xlabel, ylabel, title="", marker="o", highlight=None):
    """Line-and-marker plot; ``highlight`` is an optional (x, y) point."""
    fig = Figure(figsize=(5, 4))
    ax = fig.add_subplot(111)
    ax.plot(np.asarray(x), np.asarray(y), marker=marker, lw=1.0)
    if highlight is not None:
        ax.plot([highlight[0]], [highlight[1]], "r*", ms=10)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    _save(fig, path)
