"""Numerical checks of the weighted estimates, the convexity property and the gradient.

Every constant the analysis leaves unspecified is replaced by a fixed
harness value: ensembles are seeded, the positivity margin is ``eps`` and
trial counts are arguments.  Integrals in ``z`` use Gauss-Legendre rules
on polynomial profiles, so they are exact up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial
from scipy import ndimage

from .basis import build_basis, invariant_report
from .inversion import CWF, CarlemanFunctional, source_tensors
from .model import CauchyData, DomainError, Grid3D, gauss_legendre


class DegenerateInputError(DomainError):
    """The test function is identically zero."""


class PreconditionError(DomainError):
    """Boundary conditions required by the estimate are violated."""


# --- one-dimensional estimate ---------------------------------------------


def _weighted_integrals(u: Polynomial, lam: float, theta: float, b: float, n_quad: int = 96):
    z, w = gauss_legendre(-b, b, n_quad)
    mu = CWF(lam, theta, b).normalized(z)
    d1, d2 = u.deriv(), u.deriv(2)
    return (
        float(np.sum(w * mu * d2(z) ** 2)),
        float(np.sum(w * mu * d1(z) ** 2)),
        float(np.sum(w * mu * u(z) ** 2)),
    )


def carleman_1d_ratio(u, lam: float, theta: float = 4.0, b: float = 2.0, tol: float = 1e-10) -> float:
    """``I2 / (I2 + lam I1 + lam^3 I0)`` with ``Ik = int (u^(k))^2 mu``.

    ``u`` is a polynomial (or coefficient sequence in ``z``) with
    ``u(-b) = u'(-b) = 0``.  The weight is normalised, which cancels in the
    ratio.
    """
    u = u if isinstance(u, Polynomial) else Polynomial(np.asarray(u, dtype=float))
    scale = max(1.0, float(np.abs(u.coef).max()))
    if abs(u(-b)) > tol * scale or abs(u.deriv()(-b)) > tol * scale:
        raise PreconditionError("u must satisfy u(-b) = u'(-b) = 0")
    i2, i1, i0 = _weighted_integrals(u, lam, theta, b)
    den = i2 + lam * i1 + lam**3 * i0
    if den == 0:
        raise DegenerateInputError("u vanishes identically")
    return i2 / den


def random_profile(rng: np.random.Generator, b: float = 2.0, degree: int = 4) -> Polynomial:
    """``(z + b)^2 q(z)`` with ``q`` a random polynomial of the given degree on ``[-b, b]``."""
    q = Polynomial(rng.standard_normal(degree + 1), domain=[-b, b], window=[-1, 1]).convert()
    return Polynomial([b, 1.0]) ** 2 * q


def carleman_1d_ensemble(lams, n_functions: int = 100, seed: int = 0, theta: float = 4.0,
                         b: float = 2.0, degree: int = 4) -> dict:
    """Minimum ratio over a seeded ensemble for each ``lam``."""
    rng = np.random.default_rng(seed)
    profiles = [random_profile(rng, b, degree) for _ in range(n_functions)]
    return {float(lam): min(carleman_1d_ratio(u, lam, theta, b) for u in profiles) for lam in lams}


# --- partial finite differences ---------------------------------------------


@dataclass(frozen=True)
class PFDReport:
    """Terms of the weighted estimate for the semi-discrete Laplacian.

    The third right-hand group is ``lam^3 (grad_xy + dz + u_sq)`` since the
    semi-discrete gradient carries the exact z-derivative.
    """

    lam: float
    lhs: float
    dzz: float
    dz: float
    grad_xy: float
    u_sq: float
    eps: float

    @property
    def rhs_groups(self) -> tuple[float, float, float]:
        lam = self.lam
        return self.dzz, lam * self.dz, lam**3 * (self.grad_xy + self.dz + self.u_sq)

    @property
    def holds(self) -> bool:
        return self.lhs >= self.eps * sum(self.rhs_groups)

    def ratio_1d(self) -> float:
        """The 1D ratio built from the same terms (meaningful for z-only fields)."""
        den = self.dzz + self.lam * self.dz + self.lam**3 * self.u_sq
        return self.lhs / den if den else float("nan")


def carleman_pfd_check(coeffs, h: float, lam: float, theta: float = 4.0, b: float = 2.0,
                       eps: float = 1e-3, n_quad: int = 64, tol: float = 1e-10) -> PFDReport:
    """Evaluate both sides of the weighted estimate for a semi-discrete field.

    ``coeffs`` has shape ``(nx, ny, deg + 1)``: the power-series coefficients
    in ``z`` of ``u_{p,q}(z)``.  The field must vanish with its z-derivative
    at ``z = -b`` and have zero lateral normal differences (edge nodes equal
    their inward neighbours).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 3 or min(coeffs.shape[:2]) < 3:
        raise PreconditionError("need coefficients of shape (nx, ny, deg + 1) with nx, ny >= 3")
    z, w = gauss_legendre(-b, b, n_quad)
    P = np.polynomial.polynomial

    def evaluate(x, c):
        return P.polyval(x, np.moveaxis(c, -1, 0))

    d1 = P.polyder(coeffs, 1, axis=2)
    d2 = P.polyder(coeffs, 2, axis=2)
    scale = max(1.0, float(np.abs(coeffs).max()))
    at_gamma = evaluate(-b, coeffs)
    dz_gamma = evaluate(-b, d1)
    if np.abs(at_gamma).max() > tol * scale or np.abs(dz_gamma).max() > tol * scale:
        raise PreconditionError("field must satisfy u = u_z = 0 on z = -b")
    lateral = max(
        np.abs(coeffs[0] - coeffs[1]).max(), np.abs(coeffs[-1] - coeffs[-2]).max(),
        np.abs(coeffs[:, 0] - coeffs[:, 1]).max(), np.abs(coeffs[:, -1] - coeffs[:, -2]).max(),
    )
    if lateral > tol * scale:
        raise PreconditionError("field must have zero lateral normal differences")
    V, Vz, Vzz = evaluate(z, coeffs), evaluate(z, d1), evaluate(z, d2)
    c = (slice(1, -1), slice(1, -1))
    lap_xy = (V[2:, 1:-1] + V[:-2, 1:-1] + V[1:-1, 2:] + V[1:-1, :-2] - 4 * V[c]) / h**2
    gx = (V[2:, 1:-1] - V[:-2, 1:-1]) / (2 * h)
    gy = (V[1:-1, 2:] - V[1:-1, :-2]) / (2 * h)
    mu = CWF(lam, theta, b).normalized(z)
    wt = h * h * w * mu

    def integral(a):
        return float(np.sum(a * wt))

    return PFDReport(
        lam=lam,
        lhs=integral((Vzz[c] + lap_xy) ** 2),
        dzz=integral(Vzz[c] ** 2),
        dz=integral(Vz[c] ** 2),
        grad_xy=integral(gx**2 + gy**2),
        u_sq=integral(V[c] ** 2),
        eps=eps,
    )


def random_pfd_field(rng: np.random.Generator, n: int = 9, b: float = 2.0, degree: int = 4) -> np.ndarray:
    """Coefficients of ``(z + b)^2 q_{p,q}(z)`` with lateral Neumann copies."""
    base = np.polynomial.polynomial.polypow([b, 1.0], 2)
    q = rng.standard_normal((n, n, degree + 1)) / (b ** np.arange(degree + 1))
    q[0], q[-1] = q[1], q[-2]
    q[:, 0], q[:, -1] = q[:, 1], q[:, -2]
    out = np.zeros((n, n, degree + 3))
    for i in range(degree + 1):
        out[..., i : i + 3] += q[..., i : i + 1] * base
    return out


def pfd_ensemble(lams, n_fields: int = 50, seed: int = 0, h: float = 0.5, eps: float = 1e-3,
                 theta: float = 4.0, b: float = 2.0) -> dict:
    """Fraction of seeded random fields for which the estimate holds at each ``lam``."""
    rng = np.random.default_rng(seed)
    fields = [random_pfd_field(rng, b=b) for _ in range(n_fields)]
    return {
        float(lam): float(np.mean([carleman_pfd_check(f, h, lam, theta, b, eps).holds for f in fields]))
        for lam in lams
    }


# --- convexity --------------------------------------------------------------


def small_grid(n: int = 7, R: float = 1.0, b: float = 2.0) -> Grid3D:
    """``n^3`` lattice over ``[-R, R]^2 x [-b, b]``; the default gives a lateral step near 1/3."""
    return Grid3D(n, n, n, (-R, -R, -b), (2 * R / (n - 1), 2 * R / (n - 1), 2 * b / (n - 1)))


def smooth_random(rng: np.random.Generator, shape, sigma: float = 1.0) -> np.ndarray:
    """Complex Gaussian-filtered noise scaled to unit maximum modulus."""
    re = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="nearest")
    im = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="nearest")
    f = re + 1j * im
    peak = np.abs(f).max()
    return f / peak if peak > 0 else f


def random_cauchy(grid: Grid3D, N: int, seed: int = 0, amplitude: float = 1.0) -> CauchyData:
    rng = np.random.default_rng(seed)
    shape = (N, grid.nx, grid.ny)
    sig = (0, 1, 1)
    return CauchyData(grid.x, grid.y, amplitude * smooth_random(rng, shape, sig),
                      amplitude * smooth_random(rng, shape, sig))


def bregman_gap(functional: CarlemanFunctional, V, r) -> tuple[float, float]:
    """``J(V + r) - J(V) - <J'(V), r>`` for an admissible ``V`` and a free-node ``r``."""
    J0, g = functional.value_and_gradient(V)
    J1 = functional.value(functional.step(V, r, 1.0))
    r = np.where(functional.free, r, 0)
    return J1 - J0 - float(np.real(np.vdot(g, r))), J0


def convexity_trial(cauchy: CauchyData, lam: float, trials: int = 200, seed: int = 0,
                    grid: Optional[Grid3D] = None, N: Optional[int] = None, k: float = 6.62,
                    d: float = 9.0, theta: float = 4.0, a1: float = 0.1, a2: float = 0.6,
                    amplitude: float = 1.0) -> float:
    """Fraction of random admissible pairs with a negative Bregman gap.

    ``V`` and ``r`` are smooth random fields with unit maximum modulus, each
    scaled by a uniform factor in ``(0, 1]`` (``V`` also by ``amplitude``);
    ``r`` moves only free nodes so both states share the Cauchy data.  A
    trial is a violation when the gap falls below ``-1e-12 max(1, J(V))``.
    """
    if trials < 50:
        raise ValueError("need at least 50 trials")
    N = cauchy.N if N is None else N
    if grid is None:
        grid = small_grid(len(cauchy.x))
    b = -grid.z[0]
    basis = build_basis(a1, a2, N)
    F = CarlemanFunctional(grid, basis, source_tensors(grid, basis, k, d), cauchy, CWF(lam, theta, b))
    rng = np.random.default_rng(seed)
    shape = (N,) + grid.shape
    sig = (0, 1, 1, 1)
    bad = 0
    for _ in range(trials):
        V = F.apply_constraints(amplitude * rng.uniform(0, 1) * smooth_random(rng, shape, sig))
        r = smooth_random(rng, shape, sig) * rng.uniform(0, 1)
        gap, J0 = bregman_gap(F, V, r)
        bad += gap < -1e-12 * max(1.0, J0)
    return bad / trials


# --- gradient and basis reports -----------------------------------------------


def gradient_check(functional: CarlemanFunctional, pairs: int = 30, seed: int = 0,
                   eps: float = 1e-6, amplitude: float = 0.3) -> np.ndarray:
    """Relative errors of analytic directional derivatives against central differences."""
    rng = np.random.default_rng(seed)
    shape = (functional.N,) + functional.grid.shape
    errors = []
    for _ in range(pairs):
        V = functional.apply_constraints(amplitude * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)))
        r = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * functional.free
        g = functional.gradient(V)
        exact = float(np.real(np.vdot(g, r)))
        fd = (functional.value(functional.step(V, r, eps)) - functional.value(functional.step(V, r, -eps))) / (2 * eps)
        errors.append(abs(fd - exact) / max(abs(exact), 1e-300))
    return np.asarray(errors)


def basis_report(a1: float = 0.1, a2: float = 0.6, Ns=(2, 4, 8)) -> list[dict]:
    return [invariant_report(build_basis(a1, a2, N)) for N in Ns]


def small_functional(N: int = 2, lam: float = 1.1, seed: int = 0, n: int = 7,
                     neumann_order: int = 1, omega1_depth: Optional[float] = None,
                     amplitude: float = 0.3) -> CarlemanFunctional:
    """Functional on :func:`small_grid` with smooth random Cauchy data."""
    grid = small_grid(n)
    basis = build_basis(0.1, 0.6, N)
    cauchy = random_cauchy(grid, N, seed, amplitude)
    return CarlemanFunctional(grid, basis, source_tensors(grid, basis, 6.62, 9.0), cauchy,
                              CWF(lam, 4.0, -grid.z[0]), neumann_order=neumann_order,
                              omega1_depth=omega1_depth)


# --- command-line suites -------------------------------------------------------


@dataclass
class SuiteReport:
    name: str
    lines: list
    passed: bool

    def text(self) -> str:
        return "\n".join(self.lines + [f"{self.name}: {'PASS' if self.passed else 'FAIL'}"])


def suite_basis(tol: float = 1e-8, det_tol: float = 1e-6) -> SuiteReport:
    lines, ok = [], True
    for rep in basis_report():
        good = (rep["orthonormality"] <= tol and rep["diag_S"] <= tol and rep["lower_S"] <= tol
                and abs(rep["det_S"] - 1) <= det_tol)
        ok &= good
        lines.append(f"N={rep['N']}: orthonormality {rep['orthonormality']:.2e}, diag(S)-1 {rep['diag_S']:.2e}, "
                     f"lower(S) {rep['lower_S']:.2e}, det S - 1 {rep['det_S'] - 1:.2e}")
    return SuiteReport("basis", lines, ok)


def suite_carleman(seed: int = 0, lams=(1.0, 2.0, 4.0, 8.0)) -> SuiteReport:
    """1D ensemble: ratio at least 0.01 and at most a factor 2 of decay across ``lams``."""
    ratios = carleman_1d_ensemble(lams, 100, seed)
    lines = [f"lambda={lam:g}: min ratio {r:.4f}" for lam, r in ratios.items()]
    vals = list(ratios.values())
    ok = min(vals) >= 0.01 and max(vals) <= 2 * min(vals)
    pfd = pfd_ensemble(lams[1:], seed=seed)
    lines += [f"partial FD, lambda={lam:g}: {frac:.0%} of fields satisfy the estimate" for lam, frac in pfd.items()]
    return SuiteReport("carleman", lines, bool(ok))


def suite_convexity(seed: int = 0, trials: int = 200, lams=(1.0, 2.0, 5.0, 10.0)) -> SuiteReport:
    """Violation fraction non-increasing over ``lams`` and at most 1% at the largest."""
    grid = small_grid()
    cauchy = random_cauchy(grid, 2, seed)
    fracs = [convexity_trial(cauchy, lam, trials, seed, grid) for lam in lams]
    lines = [f"lambda={lam:g}: {f:.1%} of {trials} trials violate convexity" for lam, f in zip(lams, fracs)]
    ok = fracs[-1] <= 0.01 and all(b <= a for a, b in zip(fracs, fracs[1:]))
    return SuiteReport("convexity", lines, bool(ok))


def suite_gradient(seed: int = 0, tol: float = 1e-5) -> SuiteReport:
    errs = gradient_check(small_functional(seed=seed), 30, seed)
    lines = [f"30 pairs: max relative error {errs.max():.2e}, median {np.median(errs):.2e}"]
    return SuiteReport("gradient", lines, bool(errs.max() <= tol))


SUITES = {"basis": suite_basis, "carleman": suite_carleman, "convexity": suite_convexity,
          "gradient": suite_gradient}
