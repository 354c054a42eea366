"""Dielectric constant from the minimiser, final smoothing and inclusion extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .basis import BasisSet, synthesize_from_basis
from .inversion import StateVector, gradient, interior_points, laplacian, tilde_x
from .model import Grid3D


def recover_dielectric(V: StateVector, basis: BasisSet, k: float, d: float,
                       alphas: Sequence[float]) -> np.ndarray:
    """Pointwise dielectric constant on the grid.

    For each source the field ``v = log(u/u_i)`` satisfies
    ``Delta v + grad v . grad v + 2 grad v . tilde_x = -k^2 (c - 1)``.  The
    modulus of the right-hand estimate is averaged over the sources, so the
    result is ``>= 1`` by construction.  Boundary nodes are set to 1.
    """
    g = V.grid
    alphas = np.asarray(alphas, dtype=float)
    v = synthesize_from_basis(V.values, basis, alphas)
    if v.ndim == 3:
        v = v[None]
    pts = interior_points(g)
    acc = np.zeros((g.nx - 2, g.ny - 2, g.nz - 2))
    for va, a in zip(v, alphas):
        grad = gradient(va, g.step)
        tx = np.moveaxis(tilde_x(pts, a, k, d), -1, 0)
        lhs = laplacian(va, g.step) + np.sum(grad * grad, axis=0) + 2 * np.sum(grad * tx, axis=0)
        acc += np.abs(lhs) / k**2
    c = np.ones(g.shape)
    c[1:-1, 1:-1, 1:-1] += acc / len(alphas)
    return c


def finalize_field(c, sigma: float = 1.0) -> np.ndarray:
    """Smooth the contrast ``c - 1`` and rescale it to keep its peak.

    ``sigma`` is in grid steps; ``sigma = 0`` returns a copy.
    """
    c = np.asarray(c, dtype=float)
    contrast = np.abs(c - 1.0)
    if sigma <= 0:
        return 1.0 + contrast
    smooth = ndimage.gaussian_filter(contrast, sigma, mode="nearest", truncate=4.0)
    peak, speak = contrast.max(), smooth.max()
    if speak > 0:
        smooth *= peak / speak
    return 1.0 + smooth


@dataclass(frozen=True)
class InclusionEstimate:
    """Region where the contrast exceeds a fraction of its peak."""

    max_c: float
    argmax: tuple[float, float, float]
    centroid: tuple[float, float, float]
    bbox_min: tuple[float, float, float]
    bbox_max: tuple[float, float, float]
    n_nodes: int
    isovalue: float

    def as_dict(self) -> dict:
        return {
            "max_c": self.max_c,
            "argmax": list(self.argmax),
            "centroid": list(self.centroid),
            "bbox_min": list(self.bbox_min),
            "bbox_max": list(self.bbox_max),
            "n_nodes": self.n_nodes,
            "isovalue": self.isovalue,
        }


def extract_inclusion(c, grid: Grid3D, fraction: float = 0.1,
                      tol: float = 1e-9) -> Optional[InclusionEstimate]:
    """Threshold ``c - 1 >= fraction * max(c - 1)``.

    Returns ``None`` when the peak contrast does not exceed ``tol``.
    """
    c = np.asarray(c, dtype=float)
    contrast = c - 1.0
    peak = contrast.max()
    if not peak > tol:
        return None
    mask = contrast >= fraction * peak
    X, Y, Z = grid.mesh()
    pts = np.column_stack([X[mask], Y[mask], Z[mask]])
    top = np.unravel_index(np.argmax(c), c.shape)
    return InclusionEstimate(
        max_c=float(c.max()),
        argmax=(float(grid.x[top[0]]), float(grid.y[top[1]]), float(grid.z[top[2]])),
        centroid=tuple(float(v) for v in pts.mean(axis=0)),
        bbox_min=tuple(float(v) for v in pts.min(axis=0)),
        bbox_max=tuple(float(v) for v in pts.max(axis=0)),
        n_nodes=int(mask.sum()),
        isovalue=float(1.0 + fraction * peak),
    )
