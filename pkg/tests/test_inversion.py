import numpy as np
import pytest

from convexcip.basis import build_basis, synthesize_from_basis
from convexcip.forward import incident_wave
from convexcip.inversion import (
    CWF,
    CarlemanFunctional,
    NonConvergenceError,
    StateVector,
    build_starting_point,
    cutoff,
    gradient,
    gradient_adjoint,
    hat_x,
    interior_points,
    laplacian,
    laplacian_adjoint,
    minimize,
    source_tensors,
    starting_profile,
    tilde_x,
)
from convexcip.model import CauchyData, Grid3D, ShapeError
from convexcip.verify import random_cauchy, small_functional, small_grid

K, D = 6.62, 9.0
rng = np.random.default_rng(11)


def _c(*shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# --- weight -------------------------------------------------------------------


@pytest.mark.parametrize("lam", [1.1, 3.0, 50.0])
def test_cwf_extremes(lam):
    w = CWF(lam, 4.0, 2.0)
    assert w.normalized(-2.0) == 1.0
    assert w.normalized(2.0) == pytest.approx(np.exp(2 * lam * ((2 - 4) ** 2 - (2 + 4) ** 2)), rel=1e-12)
    z = np.linspace(-2, 2, 41)
    assert np.all(np.diff(w.log_weight(z)) < 0)


def test_cwf_validation():
    with pytest.raises(ValueError):
        CWF(0.0, 4.0, 2.0)
    with pytest.raises(ValueError):
        CWF(1.0, 2.0, 2.0)


# --- source geometry --------------------------------------------------------------


def test_tilde_x_is_log_gradient_of_incident_wave():
    # [DERIVED] central differences of log u_i
    x = np.array([[0.3, -0.4, -1.2], [1.0, 1.0, 1.5]])
    h = 1e-6
    fd = np.stack(
        [(np.log(incident_wave(x + h * e, 0.25, K, D)) - np.log(incident_wave(x - h * e, 0.25, K, D))) / (2 * h) for e in np.eye(3)],
        axis=-1,
    )
    np.testing.assert_allclose(tilde_x(x, 0.25, K, D), fd, rtol=1e-7)


def test_hat_x_is_alpha_derivative():
    x = np.array([[0.3, -0.4, -1.2], [1.0, 1.0, 1.5]])
    h = 1e-6
    fd = (tilde_x(x, 0.25 + h, K, D) - tilde_x(x, 0.25 - h, K, D)) / (2 * h)
    np.testing.assert_allclose(hat_x(x, 0.25, K, D), fd, rtol=1e-6, atol=1e-9)


# --- difference operators ---------------------------------------------------------


def test_difference_operators_exact_on_quadratics():
    g = Grid3D(7, 7, 9, (-1.0, -1.0, -2.0), (1 / 3, 1 / 3, 0.5))
    X, Y, Z = g.mesh()
    v = (X**2 - 2 * X * Y + 3 * Z**2 + X * Z + Y)[None]
    lap = laplacian(v, g.step)[0]
    np.testing.assert_allclose(lap, 2 + 6, atol=1e-11)
    grad = gradient(v, g.step)[0]
    s = (slice(1, -1),) * 3
    np.testing.assert_allclose(grad[0], (2 * X - 2 * Y + Z)[s], atol=1e-11)
    np.testing.assert_allclose(grad[1], (-2 * X + 1)[s], atol=1e-11)
    np.testing.assert_allclose(grad[2], (6 * Z + X)[s], atol=1e-11)


def test_difference_adjoints():
    g = small_grid()
    step, shape = g.step, g.shape
    V = _c(2, *shape)
    R = _c(2, *(n - 2 for n in shape))
    Z = _c(2, 3, *(n - 2 for n in shape))
    assert np.vdot(R, laplacian(V, step)) == pytest.approx(np.vdot(laplacian_adjoint(R, step, shape), V))
    assert np.vdot(Z, gradient(V, step)) == pytest.approx(np.vdot(gradient_adjoint(Z, step, shape), V))


# --- functional -------------------------------------------------------------------


@pytest.fixture(scope="module")
def residual_setup():
    g = small_grid()
    basis = build_basis(0.1, 0.6, 3)
    cd = random_cauchy(g, 3, seed=2, amplitude=0.2)
    F = CarlemanFunctional(g, basis, source_tensors(g, basis, K, D), cd, CWF(1.1, 4.0, 2.0), omega1_depth=None)
    return F


def test_residual_matches_alpha_sampled_equation(residual_setup):
    # [DERIVED] evaluate the alpha-differentiated equation on quadrature samples of
    # v and dv/dalpha, then project onto the basis and apply S^-1
    F = residual_setup
    g, B = F.grid, F.basis
    V = F.apply_constraints(0.3 * _c(3, *g.shape))
    a = B.nodes
    v = np.tensordot(B.psi, V, axes=(0, 0))
    q = np.tensordot(B.dpsi, V, axes=(0, 0))
    pts = interior_points(g)
    R = np.empty((a.size,) + tuple(n - 2 for n in g.shape), dtype=complex)
    for i, al in enumerate(a):
        gv, gq = gradient(v[i][None], g.step)[0], gradient(q[i][None], g.step)[0]
        tx = np.moveaxis(tilde_x(pts, al, K, D), -1, 0)
        hx = np.moveaxis(hat_x(pts, al, K, D), -1, 0)
        R[i] = laplacian(q[i][None], g.step)[0] + 2 * np.sum(gq * (gv + tx), axis=0) + 2 * np.sum(gv * hx, axis=0)
    proj = np.tensordot(B.psi * B.weights, R, axes=(1, 0))
    expected = np.tensordot(B.S_inv, proj, axes=(1, 0))
    np.testing.assert_allclose(F.residual(V), expected, rtol=1e-9, atol=1e-9 * np.abs(expected).max())


@pytest.mark.parametrize("order", [1, 2])
@pytest.mark.parametrize("depth", [None, 2.0, 1.0])
def test_gradient_matches_central_differences(order, depth):
    F = small_functional(N=2, neumann_order=order, omega1_depth=depth, seed=3)
    V = F.apply_constraints(0.3 * _c(2, *F.grid.shape))
    r = _c(2, *F.grid.shape) * F.free
    J, G = F.value_and_gradient(V)
    eps = 1e-6
    fd = (F.value(F.step(V, r, eps)) - F.value(F.step(V, r, -eps))) / (2 * eps)
    assert fd == pytest.approx(np.real(np.vdot(G, r)), rel=1e-6)
    assert J == pytest.approx(F.value(V), rel=1e-13)


@pytest.mark.parametrize("order", [1, 2])
def test_constraint_adjoint(order):
    g = small_grid()
    zero = CauchyData(g.x, g.y, np.zeros((2, 7, 7)), np.zeros((2, 7, 7)))
    basis = build_basis(0.1, 0.6, 2)
    F = CarlemanFunctional(g, basis, source_tensors(g, basis, K, D), zero, CWF(1.1, 4.0, 2.0), neumann_order=order)
    X = _c(2, *g.shape) * F.free
    Y = _c(2, *g.shape)
    assert np.vdot(Y, F.apply_constraints(X)) == pytest.approx(np.vdot(F.constraint_adjoint(Y), X))


def test_constraints_pin_cauchy_data():
    F = small_functional(seed=4)
    V = F.apply_constraints(_c(2, *F.grid.shape))
    assert F.is_admissible(V)
    np.testing.assert_array_equal(V[..., 0], F.cauchy.psi0)
    np.testing.assert_allclose((V[..., 1] - V[..., 0]) / F.grid.h_z, F.cauchy.psi1)
    np.testing.assert_array_equal(F.apply_constraints(V), V)


def test_linear_part_is_quadratic_and_zero_at_origin():
    g = small_grid()
    zero = CauchyData(g.x, g.y, np.zeros((2, 7, 7)), np.zeros((2, 7, 7)))
    basis = build_basis(0.1, 0.6, 2)
    F = CarlemanFunctional(g, basis, source_tensors(g, basis, K, D), zero, CWF(2.0, 4.0, 2.0),
                           suppress_nonlinearity=True)
    assert F.value(np.zeros((2,) + g.shape)) == 0
    V = F.apply_constraints(_c(2, *g.shape))
    assert F.value(3 * V) == pytest.approx(9 * F.value(V), rel=1e-12)


def test_functional_rejects_mismatched_lattice():
    g = small_grid()
    basis = build_basis(0.1, 0.6, 2)
    cd = CauchyData(g.x + 0.1, g.y, np.zeros((2, 7, 7)), np.zeros((2, 7, 7)))
    with pytest.raises(ShapeError):
        CarlemanFunctional(g, basis, source_tensors(g, basis, K, D), cd, CWF(1.1, 4.0, 2.0))


# --- starting point ---------------------------------------------------------------


def test_cutoff_profile():
    z = np.array([-2.0, -1.0, -1e-9, 0.0, 1.0])
    c = cutoff(z, 2.0)
    assert c[0] == 1.0 and c[3] == 0 and c[4] == 0 and c[2] < 1e-100
    h = 1e-6
    assert (cutoff(-2 + h, 2.0) - cutoff(-2 - h, 2.0)) / (2 * h) == pytest.approx(0, abs=1e-6)


def test_starting_point_matches_cauchy_data():
    F = small_functional(seed=5)
    prof = starting_profile(F.cauchy, np.array([-2.0]), 2.0)
    np.testing.assert_array_equal(prof[..., 0], F.cauchy.psi0)
    V0 = build_starting_point(F.cauchy, F)
    assert F.is_admissible(V0.values)


def test_state_vector_is_read_only():
    g = small_grid()
    s = StateVector(g, np.zeros((2,) + g.shape))
    with pytest.raises(ValueError):
        s.values[0, 0, 0, 0] = 1
    with pytest.raises(ShapeError):
        StateVector(g, np.zeros((2, 3, 3, 3)))


# --- descent ----------------------------------------------------------------------


def test_descent_is_monotone_and_stops_by_rule():
    F = small_functional(seed=6, lam=1.1)
    V0 = build_starting_point(F.cauchy, F)
    res = minimize(V0, F, gamma0=0.1, max_iter=5000, tol_j=1e-8)
    Js = [t[2] for t in res.trace]
    assert all(b <= a for a, b in zip(Js, Js[1:]))
    assert res.reason in ("step size", "J change")
    assert res.J < Js[0]


def test_iteration_cap_raises_with_state():
    F = small_functional(seed=6)
    V0 = build_starting_point(F.cauchy, F)
    with pytest.raises(NonConvergenceError) as err:
        minimize(V0, F, gamma0=1e-6, max_iter=5, tol_j=0)
    assert len(err.value.trace) == 6 and err.value.state is not None
    assert F.is_admissible(err.value.state.values)
