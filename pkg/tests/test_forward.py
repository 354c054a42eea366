import numpy as np
import pytest

from convexcip.forward import (
    DielectricField,
    SingularityError,
    born_scattered,
    incident_wave,
    incident_wave_dz,
    plane_points,
    self_term,
    solve_lippmann_schwinger,
    synthesize_measurements,
)
from convexcip.model import Grid3D, Inclusion

K, D = 6.62, 9.0


@pytest.fixture(scope="module")
def grid():
    return Grid3D.covering(1.0, 2.0, 0.25, 0.25)


def _box(grid, c):
    return DielectricField.from_inclusions(grid, [Inclusion("box", (0.0, 0.0, -1.0), (0.5, 0.5, 0.5), c)])


def test_incident_wave_solves_helmholtz():
    # [DERIVED] second-order central differences of the closed form
    x0 = np.array([0.3, -0.2, -1.0])
    h = 1e-3
    lap = -6 * incident_wave(x0, 0.3, K)
    for e in np.eye(3):
        lap += incident_wave(x0 + h * e, 0.3, K) + incident_wave(x0 - h * e, 0.3, K)
    lap /= h * h
    assert abs(lap + K * K * incident_wave(x0, 0.3, K)) < 1e-5 * abs(K * K * incident_wave(x0, 0.3, K))


def test_incident_wave_dz_matches_difference():
    x = np.array([[0.1, 0.4, -2.0], [1.0, 0.0, 0.5]])
    h = 1e-6
    fd = (incident_wave(x + [0, 0, h], 0.2, K) - incident_wave(x - [0, 0, h], 0.2, K)) / (2 * h)
    np.testing.assert_allclose(incident_wave_dz(x, 0.2, K), fd, rtol=1e-7)


def test_incident_wave_singular_at_source():
    with pytest.raises(SingularityError):
        incident_wave(np.array([0.2, 0.0, -D]), 0.2, K)


def test_self_term_small_k_limit():
    # [DERIVED] static limit of the ball integral of 1/(4 pi r): a^2 / 2
    vol = 1e-3
    a = (3 * vol / (4 * np.pi)) ** (1 / 3)
    assert self_term(1e-4, vol).real == pytest.approx(a * a / 2, rel=1e-6)
    assert self_term(0.0, vol) == pytest.approx(a * a / 2)


def test_dielectric_field_validation(grid):
    c = np.ones(grid.shape)
    c[0, 0, 0] = 2
    with pytest.raises(ValueError, match="boundary"):
        DielectricField(grid, c)
    with pytest.raises(ValueError, match=">= 1"):
        DielectricField(grid, np.full(grid.shape, 0.5))


def test_zero_contrast_gives_zero_scattered_field(grid):
    x = np.linspace(-5, 5, 11)
    meas = synthesize_measurements(DielectricField.background(grid), [0.2, 0.4], K, -14.0, x, d=D)
    assert np.abs(meas.samples).max() <= 1e-12


def test_weak_contrast_matches_born(grid):
    # [DERIVED] first Born approximation is the O(eps) limit of the solution
    pts = plane_points(np.linspace(-2, 2, 5), np.linspace(-2, 2, 5), -14.0)
    c = _box(grid, 1.001)
    sol = solve_lippmann_schwinger(c, 0.35, K, D)
    born = born_scattered(c, 0.35, K, pts, D)
    us = sol.scattered(pts)
    assert np.linalg.norm(us - born) / np.linalg.norm(us) < 5e-3


def test_collocation_residual_and_total_field(grid):
    c = _box(grid, 3.0)
    sol = solve_lippmann_schwinger(c, 0.35, K, D)
    assert sol.residual <= 1e-10
    field = sol.on_grid()
    assert field.values.shape == grid.shape
    X, Y, Z = grid.mesh()
    far = np.stack([X[0, 0, 0], Y[0, 0, 0], Z[0, 0, 0]])
    assert field.values[0, 0, 0] == pytest.approx(sol.total(far))


def test_noise_level_is_relative_rms(grid):
    x = np.linspace(-5, 5, 21)
    c = _box(grid, 2.0)
    clean = synthesize_measurements(c, [0.3], K, -14.0, x, d=D)
    noisy = synthesize_measurements(c, [0.3], K, -14.0, x, d=D, noise=0.05, rng=np.random.default_rng(1))
    rel = np.sqrt(np.mean(np.abs(noisy.samples - clean.samples) ** 2)) / np.sqrt(np.mean(np.abs(clean.samples) ** 2))
    assert rel == pytest.approx(0.05, rel=0.15)


def test_seeded_noise_is_deterministic(grid):
    x = np.linspace(-5, 5, 11)
    c = _box(grid, 2.0)
    a = synthesize_measurements(c, [0.3], K, -14.0, x, d=D, noise=0.05, rng=np.random.default_rng(7))
    b = synthesize_measurements(c, [0.3], K, -14.0, x, d=D, noise=0.05, rng=np.random.default_rng(7))
    np.testing.assert_array_equal(a.samples, b.samples)
