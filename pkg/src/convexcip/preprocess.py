"""Reference subtraction, truncation and peak-preserving smoothing of propagated data."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .model import MeasurementSet, ShapeError


class DegenerateSmoothingError(ArithmeticError):
    pass


def subtract_reference(meas: MeasurementSet, reference: MeasurementSet) -> MeasurementSet:
    """Samplewise ``meas - reference`` on identical lattices and sources."""
    same = (
        meas.samples.shape == reference.samples.shape
        and np.allclose(meas.x, reference.x)
        and np.allclose(meas.y, reference.y)
        and np.allclose(meas.alphas, reference.alphas)
        and np.isclose(meas.z_plane, reference.z_plane)
    )
    if not same:
        raise ShapeError("measurement and reference lattices differ")
    return meas.with_samples(meas.samples - reference.samples)


def truncation_mask(g, kappa1: float) -> np.ndarray:
    """``|g| >= kappa1 * max |g|`` with the maximum taken per source (axis 0)."""
    if not 0 < kappa1 < 1:
        raise ValueError("kappa1 must lie in (0, 1)")
    mag = np.abs(np.asarray(g))
    peak = mag.reshape(mag.shape[0], -1).max(axis=1)
    return mag >= kappa1 * peak.reshape((-1,) + (1,) * (mag.ndim - 1))


def truncate_field(g, kappa1: float = 0.4) -> np.ndarray:
    """Zero every sample below ``kappa1`` times its source's peak modulus."""
    g = np.asarray(g, dtype=complex)
    return np.where(truncation_mask(g, kappa1), g, 0)


def gaussian_smooth(g, sigma: float) -> np.ndarray:
    """Separable Gaussian over the lattice axes (all but the first), truncated at 4 sigma."""
    sig = (0,) + (sigma,) * (np.ndim(g) - 1)
    g = np.asarray(g, dtype=complex)
    re = ndimage.gaussian_filter(g.real, sig, truncate=4.0, mode="constant")
    im = ndimage.gaussian_filter(g.imag, sig, truncate=4.0, mode="constant")
    return re + 1j * im


def smooth_and_retrieve(g, sigma: float = 1.0) -> np.ndarray:
    """Gaussian-smooth each source's lattice, then rescale so its peak modulus is unchanged."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    g = np.asarray(g, dtype=complex)
    s = gaussian_smooth(g, sigma)
    before = np.abs(g).reshape(g.shape[0], -1).max(axis=1)
    after = np.abs(s).reshape(g.shape[0], -1).max(axis=1)
    if np.any((after == 0) & (before > 0)):
        raise DegenerateSmoothingError("smoothing annihilated a nonzero field")
    kappa2 = np.where(after > 0, before / np.where(after > 0, after, 1.0), 1.0)
    return s * kappa2.reshape((-1,) + (1,) * (g.ndim - 1))


def preprocess_near_field(U, dU, kappa1: float = 0.4, sigma: float = 1.0):
    """Truncate ``U`` and apply its mask to ``dU``; smooth and retrieve both."""
    mask = truncation_mask(U, kappa1)
    U_t = np.where(mask, U, 0)
    dU_t = np.where(mask, dU, 0)
    return smooth_and_retrieve(U_t, sigma), smooth_and_retrieve(dU_t, sigma)
