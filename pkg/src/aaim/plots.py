"""Figure rendering for source maps and diagnostic curves.

Every report CSV the CLI writes has a PNG sibling produced here.  Rendering
is headless (Agg) and file-based only.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .beamforming import SourceMap
from .diagnostics import StatsReport
from .errors import UnsupportedGridError

TWO_PI = 2.0 * np.pi


def save_map_figure(source_map: SourceMap, path, dynamic_range_db: float = 15.0, powers=None, title=None):
    """Render a lattice source map as a dB image clipped to the dynamic range.

    ``powers`` overrides the map's own power column (used for DAMAS q maps).
    """
    lattice = source_map.grid.lattice
    if lattice is None:
        raise UnsupportedGridError("figure rendering needs a lattice grid")
    p = source_map.powers if powers is None else np.asarray(powers, dtype=float)
    peak = p.max()
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(np.where(p > 0, p / max(peak, np.finfo(float).tiny), np.nan))
    img = db.reshape(lattice.shape)

    extent = [
        lattice.origin[0],
        lattice.origin[0] + (lattice.nx - 1) * lattice.dx,
        lattice.origin[1],
        lattice.origin[1] + (lattice.ny - 1) * lattice.dy,
    ]
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(
        img,
        origin="lower",
        extent=extent,
        cmap="inferno",
        vmin=-dynamic_range_db,
        vmax=0.0,
        aspect="equal",
        interpolation="nearest",
    )
    fig.colorbar(im, ax=ax, label="level re max (dB)")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title is None:
        title = f"{source_map.weighting}, mask={source_map.mask}"
        if source_map.band_edges is not None:
            title += f", band {source_map.frequency / TWO_PI:.0f} Hz"
        elif source_map.frequency is not None:
            title += f", {source_map.frequency / TWO_PI:.0f} Hz"
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_stats_figure(report: StatsReport, path):
    """Four diagnostic curves (zero-mean, AD rate, properness, whiteness) vs frequency."""
    hz = report.freqs / TWO_PI
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5), sharex=True)
    panels = [
        (report.eps_mean, "zero-mean deviation"),
        (report.white_noise_dev, "white-noise deviation"),
        (report.ad_acceptance_rate, "AD acceptance rate"),
        (report.proper_ratio, "PCSM/CSM norm ratio"),
    ]
    for ax, (values, label) in zip(axes.ravel(), panels):
        ax.plot(hz, values, marker="o", markersize=3, lw=1.0)
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("frequency (Hz)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_metric_curves_figure(curves: dict, path, ylabel: str, title: str | None = None):
    """Plot per-weighting metric curves: {label: (freqs rad/s, values)}."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (freqs, values) in curves.items():
        ax.plot(np.asarray(freqs) / TWO_PI, values, marker="o", markersize=3, lw=1.0, label=label)
    ax.set_xlabel("band center (Hz)")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
