"""Synthetic backscatter data from the Lippmann-Schwinger equation.

The volume integral is discretised by midpoint collocation on a uniform
simulation grid.  Only nodes where ``c != 1`` carry unknowns, so the dense
system has one row per contrast node; the field anywhere else follows from
the same integral.  Memory grows as ``16 * n_support**2`` bytes, so
``MAX_UNKNOWNS`` (6000 nodes, about 0.6 GB) is the practical bound.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import ComplexField, DomainError, Grid3D, Inclusion, MeasurementSet

log = logging.getLogger(__name__)

MAX_UNKNOWNS = 6000
_CHUNK = 2_000_000  # kernel entries evaluated per block


class SingularityError(DomainError):
    """Field requested at the source point."""


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class DielectricField:
    """Dielectric constant on a simulation grid; ``c >= 1`` and ``c == 1`` on the outer layer."""

    grid: Grid3D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"dielectric values {v.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 1.0:
            raise ValueError("dielectric constant must be finite and >= 1")
        edge = np.ones(v.shape, dtype=bool)
        edge[1:-1, 1:-1, 1:-1] = False
        if np.any(v[edge] != 1.0):
            raise ValueError("dielectric constant must equal 1 on the grid boundary layer")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def background(cls, grid: Grid3D) -> "DielectricField":
        return cls(grid, np.ones(grid.shape))

    @classmethod
    def from_inclusions(cls, grid: Grid3D, inclusions: Iterable[Inclusion]) -> "DielectricField":
        X, Y, Z = grid.mesh()
        c = np.ones(grid.shape)
        for inc in inclusions:
            c[inc.contains(X, Y, Z)] = inc.c
        c[0, :, :] = c[-1, :, :] = c[:, 0, :] = c[:, -1, :] = c[:, :, 0] = c[:, :, -1] = 1.0
        return cls(grid, c)

    def scaled_contrast(self, factor: float) -> "DielectricField":
        """Field with ``c - 1`` multiplied by ``factor``."""
        return DielectricField(self.grid, 1.0 + factor * (self.values - 1.0))

    @property
    def cell_volume(self) -> float:
        hx, hy, hz = self.grid.step
        return hx * hy * hz

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates ``(n, 3)`` and contrast ``c - 1`` of the nodes with ``c != 1``."""
        mask = self.values != 1.0
        X, Y, Z = self.grid.mesh()
        pts = np.column_stack([X[mask], Y[mask], Z[mask]])
        return pts, self.values[mask] - 1.0


def source_point(alpha: float, d: float) -> np.ndarray:
    return np.array([alpha, 0.0, -d])


def incident_wave(x, alpha: float, k: float, d: float = 9.0):
    """Point-source field ``exp(ik r) / (4 pi r)`` with ``r = |x - (alpha, 0, -d)|``.

    ``x`` may be a single point or an array of points with the coordinate
    axis last.
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x - source_point(alpha, d), axis=-1)
    if np.any(r == 0):
        raise SingularityError("incident wave evaluated at the source point")
    return np.exp(1j * k * r) / (4 * np.pi * r)


def incident_wave_dz(x, alpha: float, k: float, d: float = 9.0):
    """``d/dz`` of :func:`incident_wave`."""
    x = np.asarray(x, dtype=float)
    diff = x - source_point(alpha, d)
    r = np.linalg.norm(diff, axis=-1)
    u = np.exp(1j * k * r) / (4 * np.pi * r)
    return u * (1j * k - 1.0 / r) * diff[..., 2] / r


def green(x, xp, k: float) -> np.ndarray:
    """Free-space kernel between point sets ``x (m, 3)`` and ``xp (n, 3)``."""
    r = np.sqrt(((x[:, None, :] - xp[None, :, :]) ** 2).sum(-1))
    return np.exp(1j * k * r) / (4 * np.pi * r)


def self_term(k: float, volume: float) -> complex:
    """Integral of the kernel over a ball of the given volume centred on its pole."""
    a = (3 * volume / (4 * np.pi)) ** (1 / 3)
    if k == 0:
        return 0.5 * a * a
    return (np.exp(1j * k * a) * (1 - 1j * k * a) - 1) / k**2


def _scatter_at(points: np.ndarray, support: np.ndarray, weights: np.ndarray, k: float) -> np.ndarray:
    """``sum_j G(points, support_j) * weights_j`` evaluated block-wise."""
    out = np.zeros(len(points), dtype=complex)
    if len(support) == 0:
        return out
    step = max(1, _CHUNK // len(support))
    for i in range(0, len(points), step):
        out[i : i + step] = green(points[i : i + step], support, k) @ weights
    return out


@dataclass(frozen=True)
class LSSolution:
    """Total field on the contrast support for one source position."""

    c: DielectricField
    alpha: float
    k: float
    d: float
    points: np.ndarray
    contrast: np.ndarray
    u: np.ndarray
    residual: float

    def scattered(self, x) -> np.ndarray:
        """``k^2 int G (c-1) u`` at arbitrary points (coordinate axis last).

        Points must lie off the support; on-support values come from ``u``.
        """
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        w = self.k**2 * self.c.cell_volume * self.contrast * self.u
        return _scatter_at(x.reshape(-1, 3), self.points, w, self.k).reshape(shape)

    def total(self, x) -> np.ndarray:
        return incident_wave(x, self.alpha, self.k, self.d) + self.scattered(x)

    def on_grid(self) -> ComplexField:
        """Total field at every simulation node."""
        g = self.c.grid
        X, Y, Z = g.mesh()
        mask = self.c.values != 1.0
        pts = np.stack([X, Y, Z], axis=-1)
        u = np.empty(g.shape, dtype=complex)
        off = pts[~mask]
        u[~mask] = incident_wave(off, self.alpha, self.k, self.d) + self.scattered(off)
        u[mask] = self.u
        return ComplexField(g, u)


def solve_lippmann_schwinger(c: DielectricField, alpha: float, k: float, d: float = 9.0) -> LSSolution:
    """Solve ``u = u_i + k^2 int G (c - 1) u`` on the nodes where ``c != 1``.

    The singular self-interaction is replaced by the exact integral of the
    kernel over a ball with the cell's volume.
    """
    pts, contrast = c.support()
    n = len(pts)
    if n > MAX_UNKNOWNS:
        raise MemoryError(f"{n} contrast nodes exceed the dense-solver bound of {MAX_UNKNOWNS}")
    if n == 0:
        return LSSolution(c, alpha, k, d, pts, contrast, np.zeros(0, complex), 0.0)
    vol = c.cell_volume
    ui = incident_wave(pts, alpha, k, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        M = green(pts, pts, k) * vol
    np.fill_diagonal(M, self_term(k, vol))
    A = np.eye(n, dtype=complex) - k**2 * M * contrast[None, :]
    try:
        u = np.linalg.solve(A, ui)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"dense solve failed: {exc}", np.inf) from None
    res = float(np.linalg.norm(A @ u - ui) / np.linalg.norm(ui))
    if not res <= 1e-10:
        raise SolverError("collocation system not solved to 1e-10", res)
    return LSSolution(c, alpha, k, d, pts, contrast, u, res)


def born_scattered(c: DielectricField, alpha: float, k: float, x, d: float = 9.0) -> np.ndarray:
    """First Born approximation ``k^2 int G (c - 1) u_i`` at points ``x``."""
    pts, contrast = c.support()
    x = np.asarray(x, dtype=float)
    w = k**2 * c.cell_volume * contrast * incident_wave(pts, alpha, k, d) if len(pts) else np.zeros(0)
    return _scatter_at(x.reshape(-1, 3), pts, w, k).reshape(x.shape[:-1])


def plane_points(x: np.ndarray, y: np.ndarray, z: float) -> np.ndarray:
    X, Y = np.meshgrid(x, y, indexing="ij")
    return np.stack([X, Y, np.full_like(X, z)], axis=-1)


def synthesize_measurements(
    c: DielectricField,
    sources: Sequence[float],
    k: float,
    plane_z: float,
    x: np.ndarray,
    y: Optional[np.ndarray] = None,
    d: float = 9.0,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> MeasurementSet:
    """Scattered field on the plane ``z = plane_z`` for every source.

    With ``noise = delta > 0`` each source's samples receive additive complex
    Gaussian noise scaled to ``delta * RMS(u_s)`` of that source.
    """
    y = x if y is None else y
    pts = plane_points(x, y, plane_z)
    samples = np.zeros((len(sources), len(x), len(y)), dtype=complex)
    for i, alpha in enumerate(sources):
        sol = solve_lippmann_schwinger(c, alpha, k, d)
        samples[i] = sol.scattered(pts)
        log.debug("source %d/%d alpha=%.4f residual=%.2e", i + 1, len(sources), alpha, sol.residual)
    if noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        for i in range(len(sources)):
            rms = np.sqrt(np.mean(np.abs(samples[i]) ** 2))
            eps = rng.standard_normal(samples[i].shape) + 1j * rng.standard_normal(samples[i].shape)
            samples[i] = samples[i] + noise * rms * eps / np.sqrt(2)
    return MeasurementSet(plane_z, x, y, np.asarray(sources, dtype=float), samples)
