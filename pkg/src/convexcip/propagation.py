"""Angular-spectrum propagation of far-field backscatter to the face ``z = -b``.

Backscattered data live in the homogeneous half space ``z < -b`` and travel
toward ``-z``, so a plane-wave mode ``rho`` varies as
``exp(-i kz (z + b))`` with ``kz = sqrt(k^2 - |rho|^2)``.  Evanescent modes
(``|rho| >= k``) are dropped.  Transforms are explicit Riemann sums on
arbitrary uniform lattices, written as separable matrix products.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from skimage.restoration import unwrap_phase

from .basis import BasisSet, project_onto_basis
from .forward import incident_wave, incident_wave_dz, plane_points
from .model import CauchyData, MeasurementSet, ShapeError


class DegenerateSpectrumError(ValueError):
    """No lattice frequency lies inside the propagating disc."""


class NearZeroFieldError(ArithmeticError):
    """Total field too small on the measurement face to take its logarithm."""


def _uniform_step(a: np.ndarray, name: str) -> float:
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size < 2:
        raise ShapeError(f"{name} lattice needs at least two points")
    steps = np.diff(a)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ShapeError(f"{name} lattice is not uniform")
    return float(steps[0])


def rho_lattice(k: float, modes: int = 51, step: Optional[float] = None) -> np.ndarray:
    """Frequency lattice centred on zero.

    The default step ``2 k / (modes - 1)`` makes the lattice span exactly
    the bounding box ``[-k, k]`` of the propagating disc.
    """
    if modes < 1:
        raise ValueError("need at least one mode")
    if step is None:
        step = 2 * k / (modes - 1) if modes > 1 else 1.0
    return (np.arange(modes) - 0.5 * (modes - 1)) * step


def forward_dft2(samples, x, y, rho1, rho2) -> np.ndarray:
    """Riemann-sum Fourier transform ``w^2 sum u(x_i, y_j) exp(-i (x_i r1 + y_j r2))``.

    ``samples`` has the lattice on its last two axes.  The ``1/(2 pi)``
    factors are folded into the inverse sums.
    """
    wx, wy = _uniform_step(x, "x"), _uniform_step(y, "y")
    samples = np.asarray(samples)
    if samples.shape[-2:] != (len(x), len(y)):
        raise ShapeError(f"samples {samples.shape} do not match the {len(x)}x{len(y)} lattice")
    E1 = np.exp(-1j * np.outer(rho1, x))
    E2 = np.exp(-1j * np.outer(rho2, y))
    return wx * wy * (E1 @ samples @ E2.T)


def _band(k: float, rho1, rho2):
    R1, R2 = np.meshgrid(rho1, rho2, indexing="ij")
    inside = R1**2 + R2**2 < k * k
    if not inside.any():
        raise DegenerateSpectrumError(f"no lattice frequency satisfies |rho| < k = {k}")
    kz = np.sqrt(np.where(inside, k * k - R1**2 - R2**2, 0.0))
    return inside, kz


def _inverse(spectrum, rho1, rho2, x, y) -> np.ndarray:
    w1 = _uniform_step(rho1, "rho1") if len(rho1) > 1 else 1.0
    w2 = _uniform_step(rho2, "rho2") if len(rho2) > 1 else 1.0
    E1 = np.exp(1j * np.outer(x, rho1))
    E2 = np.exp(1j * np.outer(y, rho2))
    return w1 * w2 / (2 * np.pi) ** 2 * (E1 @ spectrum @ E2.T)


def _propagate(meas: MeasurementSet, k, b, D, rho, x_out, y_out, derivative: bool):
    if not D >= b:
        raise ValueError("need D >= b")
    if not np.isclose(meas.z_plane, -D):
        raise ShapeError(f"measurements sit at z={meas.z_plane}, expected -D={-D}")
    rho = rho_lattice(k) if rho is None else np.asarray(rho, dtype=float)
    x_out = meas.x if x_out is None else np.asarray(x_out, dtype=float)
    y_out = meas.y if y_out is None else np.asarray(y_out, dtype=float)
    inside, kz = _band(k, rho, rho)
    spectrum = forward_dft2(meas.samples, meas.x, meas.y, rho, rho)
    transfer = np.where(inside, np.exp(1j * kz * (-D + b)), 0.0)
    if derivative:
        transfer = transfer * (-1j * kz)
    return _inverse(spectrum * transfer, rho, rho, x_out, y_out)


def propagate_to_near_field(meas: MeasurementSet, k: float, b: float, D: float,
                            rho=None, x_out=None, y_out=None) -> np.ndarray:
    """Scattered field ``U(x, y, alpha)`` on ``z = -b``, shape ``(n_src, nx, ny)``."""
    return _propagate(meas, k, b, D, rho, x_out, y_out, derivative=False)


def near_field_z_derivative(meas: MeasurementSet, k: float, b: float, D: float,
                            rho=None, x_out=None, y_out=None) -> np.ndarray:
    """``d/dz u_s`` on ``z = -b``: each propagating mode carries ``-i kz``."""
    return _propagate(meas, k, b, D, rho, x_out, y_out, derivative=True)


def _unwrapped_log_ratio(ratio: np.ndarray) -> np.ndarray:
    """Complex log of ``u/u_i`` per source with a continuous phase.

    Each source's phase map is unwrapped over the lattice, anchored so the
    node closest to ``ratio == 1`` keeps its principal value, then made
    consistent across neighbouring sources.
    """
    phase = np.angle(ratio)
    out = np.empty_like(phase)
    for a in range(ratio.shape[0]):
        un = unwrap_phase(phase[a]) if np.ptp(phase[a]) > 0 else phase[a].copy()
        anchor = np.unravel_index(np.argmin(np.abs(ratio[a] - 1)), ratio[a].shape)
        un -= 2 * np.pi * np.round((un[anchor] - phase[a][anchor]) / (2 * np.pi))
        out[a] = un
    out = np.unwrap(out, axis=0)
    return np.log(np.abs(ratio)) + 1j * out


def build_cauchy_data(U, dU, basis: BasisSet, k: float, x, y, alphas, b: float, d: float,
                      threshold: float = 1e-6) -> CauchyData:
    """Fourier coefficients of ``v = log(u / u_i)`` and ``d/dz v`` on ``z = -b``.

    ``U`` and ``dU`` are the scattered near field and its z-derivative with
    shape ``(n_src, nx, ny)``; sources must be Gauss-Legendre nodes.
    """
    U = np.asarray(U, dtype=complex)
    dU = np.asarray(dU, dtype=complex)
    alphas = np.asarray(alphas, dtype=float)
    if U.shape != dU.shape or U.shape != (alphas.size, len(x), len(y)):
        raise ShapeError(f"near-field arrays {U.shape}/{dU.shape} do not match sources x lattice")
    pts = plane_points(np.asarray(x), np.asarray(y), -b)
    ui = np.stack([incident_wave(pts, a, k, d) for a in alphas])
    dui = np.stack([incident_wave_dz(pts, a, k, d) for a in alphas])
    u = ui + U
    floor = threshold * np.abs(ui).max()
    small = np.abs(u) < floor
    if small.any():
        a, i, j = np.argwhere(small)[0]
        raise NearZeroFieldError(
            f"|u| = {abs(u[a, i, j]):.3e} < {floor:.3e} at node (x={x[i]:.4g}, y={y[j]:.4g}) "
            f"for source alpha={alphas[a]:.6g}"
        )
    v = _unwrapped_log_ratio(u / ui)
    dv = (dui + dU) / u - dui / ui
    psi0 = project_onto_basis(v, basis, alpha=alphas)
    psi1 = project_onto_basis(dv, basis, alpha=alphas)
    return CauchyData(np.asarray(x, float), np.asarray(y, float), psi0, psi1)
