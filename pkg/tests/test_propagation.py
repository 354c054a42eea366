import numpy as np
import pytest
from scipy import integrate, special

from convexcip.basis import build_basis, synthesize_from_basis
from convexcip.forward import incident_wave, incident_wave_dz, plane_points
from convexcip.model import MeasurementSet, ShapeError, gauss_legendre
from convexcip.propagation import (
    DegenerateSpectrumError,
    NearZeroFieldError,
    build_cauchy_data,
    near_field_z_derivative,
    propagate_to_near_field,
    rho_lattice,
)

K, B, D = 6.62, 2.0, 4.0
S = 0.8


def _beam_oracle(r, derivative=False):
    """Angular-spectrum integral of a Gaussian travelling towards -z, by adaptive quadrature."""
    L = D - B

    def f(rho, part):
        kz = np.sqrt(K * K - rho * rho)
        v = S * S * np.exp(-S * S * rho * rho / 2) * np.exp(-1j * kz * L) * special.j0(rho * r) * rho
        if derivative:
            v *= -1j * kz
        return v.real if part == 0 else v.imag

    return complex(integrate.quad(f, 0, K, args=(0,), limit=400)[0], integrate.quad(f, 0, K, args=(1,), limit=400)[0])


@pytest.fixture(scope="module")
def beam():
    x = np.linspace(-5, 5, 51)
    X, Y = np.meshgrid(x, x, indexing="ij")
    f = np.exp(-(X**2 + Y**2) / (2 * S * S)) + 0j
    meas = MeasurementSet(-D, x, x, np.array([0.3]), f[None])
    return meas, np.hypot(X, Y)


def test_gaussian_beam_against_hankel_integral(beam):
    # [DERIVED] radially symmetric angular-spectrum oracle
    meas, R = beam
    U = propagate_to_near_field(meas, K, B, D)[0]
    dU = near_field_z_derivative(meas, K, B, D)[0]
    for i, j in [(25, 25), (30, 25), (35, 40), (20, 10)]:
        assert abs(U[i, j] - _beam_oracle(R[i, j])) < 1e-6
        assert abs(dU[i, j] - _beam_oracle(R[i, j], True)) < 1e-6


def test_zero_distance_is_identity_on_band_limited_data(beam):
    meas, _ = beam
    U = propagate_to_near_field(MeasurementSet(-B, meas.x, meas.y, meas.alphas, meas.samples), K, B, B)
    # spectral mass outside |rho| < k is exp(-(S K)^2 / 2) ~ 8e-7
    np.testing.assert_allclose(U, meas.samples, atol=2e-6)


def test_rho_lattice_spans_disc_box():
    r = rho_lattice(K, 51)
    assert r[0] == pytest.approx(-K) and r[-1] == pytest.approx(K) and r[25] == 0
    assert np.diff(r) == pytest.approx(2 * K / 50)


def test_errors(beam):
    meas, _ = beam
    with pytest.raises(ShapeError):
        propagate_to_near_field(meas, K, B, 14.0)
    with pytest.raises(DegenerateSpectrumError):
        propagate_to_near_field(meas, K, B, D, rho=np.array([-10.0, 10.0]))


@pytest.fixture(scope="module")
def span_setup():
    basis = build_basis(0.1, 0.6, 3)
    alphas, _ = gauss_legendre(0.1, 0.6, 10)
    x = np.linspace(-1, 1, 5)
    X, Y = np.meshgrid(x, x, indexing="ij")
    c0 = np.stack([0.1 * np.exp(-(X**2 + Y**2)) * (1 + 0.5j), 0.05 * X * (1 - 1j), 0.02 * (Y + 1j)])
    c1 = np.stack([0.2 * X * Y, 0.1j * np.ones_like(X), -0.05 * X])
    return basis, alphas, x, c0, c1


def test_cauchy_data_recovers_coefficients_in_span(span_setup):
    # [DERIVED] manufactured v = sum c_n Psi_n; U and dU built from u = u_i exp(v)
    basis, alphas, x, c0, c1 = span_setup
    v = synthesize_from_basis(c0, basis, alphas)
    dv = synthesize_from_basis(c1, basis, alphas)
    pts = plane_points(x, x, -B)
    ui = np.stack([incident_wave(pts, a, K, 9.0) for a in alphas])
    dui = np.stack([incident_wave_dz(pts, a, K, 9.0) for a in alphas])
    u = ui * np.exp(v)
    U = u - ui
    dU = dui * np.exp(v) + u * dv - dui
    cd = build_cauchy_data(U, dU, basis, K, x, x, alphas, B, 9.0)
    np.testing.assert_allclose(cd.psi0, c0, atol=1e-10)
    np.testing.assert_allclose(cd.psi1, c1, atol=1e-10)


def test_zero_scattered_field_gives_zero_data(span_setup):
    basis, alphas, x, _, _ = span_setup
    z = np.zeros((10, 5, 5), complex)
    cd = build_cauchy_data(z, z, basis, K, x, x, alphas, B, 9.0)
    assert np.abs(cd.psi0).max() < 1e-14 and np.abs(cd.psi1).max() < 1e-14


def test_vanishing_total_field_is_reported(span_setup):
    basis, alphas, x, _, _ = span_setup
    pts = plane_points(x, x, -B)
    U = np.zeros((10, 5, 5), complex)
    U[4, 2, 3] = -incident_wave(pts[2, 3], alphas[4], K, 9.0)
    with pytest.raises(NearZeroFieldError, match="x=0, y=0.5"):
        build_cauchy_data(U, U * 0, basis, K, x, x, alphas, B, 9.0)
