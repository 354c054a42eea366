"""Figures written next to the stage artifacts."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import Grid3D  # noqa: E402


def plot_plane(values, x, y, path, title: str = "", label: str = "|u|") -> Path:
    """Heat map of a real array on an (x, y) lattice."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.8, 4))
    im = ax.imshow(np.asarray(values).T, origin="lower", extent=(x[0], x[-1], y[0], y[-1]), cmap="viridis")
    fig.colorbar(im, ax=ax, label=label)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_field_slices(c, grid: Grid3D, path, title: str = "c_comp") -> Path:
    """Three orthogonal slices through the maximum of a grid field."""
    path = Path(path)
    c = np.asarray(c, dtype=float)
    p, q, s = np.unravel_index(np.argmax(c), c.shape)
    x, y, z = grid.x, grid.y, grid.z
    vmin, vmax = float(c.min()), float(c.max())
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    panels = [
        (c[:, :, s].T, (x[0], x[-1], y[0], y[-1]), ("x", "y"), f"z = {z[s]:.2f}"),
        (c[:, q, :].T, (x[0], x[-1], z[0], z[-1]), ("x", "z"), f"y = {y[q]:.2f}"),
        (c[p, :, :].T, (y[0], y[-1], z[0], z[-1]), ("y", "z"), f"x = {x[p]:.2f}"),
    ]
    for ax, (img, ext, (xl, yl), sub) in zip(axes, panels):
        im = ax.imshow(img, origin="lower", extent=ext, aspect="auto", vmin=vmin, vmax=vmax, cmap="magma")
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        ax.set_title(sub)
    fig.colorbar(im, ax=axes, label=title)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_trace(trace, path) -> Path:
    """``J`` and the step size against the iteration count."""
    path = Path(path)
    t = np.asarray(trace, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(t[:, 0], t[:, 2], label="J")
    ax.semilogy(t[:, 0], t[:, 1], label="step", alpha=0.7)
    ax.set_xlabel("iteration")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
