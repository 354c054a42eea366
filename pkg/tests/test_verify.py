import numpy as np
import pytest
from numpy.polynomial import Polynomial
from scipy import integrate

from convexcip.verify import (
    DegenerateInputError,
    PreconditionError,
    bregman_gap,
    carleman_1d_ensemble,
    carleman_1d_ratio,
    carleman_pfd_check,
    convexity_trial,
    random_cauchy,
    random_pfd_field,
    small_functional,
    small_grid,
    suite_basis,
    suite_gradient,
)


def test_1d_ratio_against_adaptive_quadrature():
    # [DERIVED] raw (unnormalised) weight integrated by scipy
    u = Polynomial([2.0, 1.0]) ** 2 * Polynomial([1.0, -0.5, 0.3])
    lam, theta, b = 2.0, 4.0, 2.0

    def I(f):
        return integrate.quad(lambda z: f(z) ** 2 * np.exp(2 * lam * (z - theta) ** 2), -b, b, epsrel=1e-12)[0]

    i2, i1, i0 = I(u.deriv(2)), I(u.deriv()), I(u)
    assert carleman_1d_ratio(u, lam) == pytest.approx(i2 / (i2 + lam * i1 + lam**3 * i0), rel=1e-9)


def test_1d_ratio_preconditions():
    with pytest.raises(PreconditionError):
        carleman_1d_ratio([1.0, 1.0], 1.0)
    with pytest.raises(DegenerateInputError):
        carleman_1d_ratio([0.0], 1.0)


def test_1d_ensemble_is_seeded():
    assert carleman_1d_ensemble([1.0, 4.0], 20, seed=5) == carleman_1d_ensemble([1.0, 4.0], 20, seed=5)


def test_pfd_reduces_to_1d_for_z_only_fields():
    u = Polynomial([2.0, 1.0]) ** 2 * Polynomial([0.5, 1.0, -0.2])
    coeffs = np.broadcast_to(u.coef, (5, 5, u.coef.size))
    rep = carleman_pfd_check(coeffs, 0.5, 3.0)
    assert rep.grad_xy == 0
    assert rep.ratio_1d() == pytest.approx(carleman_1d_ratio(u, 3.0), rel=1e-10)


def test_pfd_preconditions():
    rng = np.random.default_rng(0)
    f = random_pfd_field(rng, 5)
    carleman_pfd_check(f, 0.5, 2.0)
    g = f.copy()
    g[0, :, :3] += 1e-3 * np.array([4.0, 4.0, 1.0])  # (z + b)^2 keeps the face conditions
    with pytest.raises(PreconditionError, match="lateral"):
        carleman_pfd_check(g, 0.5, 2.0)
    g = f.copy()
    g[..., 0] += 1.0
    with pytest.raises(PreconditionError, match="z = -b"):
        carleman_pfd_check(g, 0.5, 2.0)


def test_bregman_gap_of_linear_problem_is_nonnegative():
    # with the nonlinearity switched off J is a convex quadratic
    F = small_functional(seed=1, lam=1.1)
    F.suppress_nonlinearity = True
    rng = np.random.default_rng(2)
    shape = (2,) + F.grid.shape
    for _ in range(5):
        V = F.apply_constraints(rng.standard_normal(shape))
        r = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        gap, J0 = bregman_gap(F, V, r)
        assert gap >= -1e-10 * max(1, J0)


def test_convexity_trial_requires_enough_trials():
    with pytest.raises(ValueError):
        convexity_trial(random_cauchy(small_grid(), 2), 1.0, trials=10)


def test_suites_pass():
    assert suite_basis().passed
    assert suite_gradient().passed
