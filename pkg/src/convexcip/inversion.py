"""Carleman-weighted functional for the coupled system ``Delta V + K(grad V) = 0``.

``V`` holds the N Fourier components ``v_0..v_{N-1}`` of ``log(u/u_i)`` on
the grid, stored as a complex array of shape ``(N, nx, ny, nz)``.  The
functional is

    J(V) = sum_{interior p,q} h^2 sum_s h_z |L(V)|^2 mu(z_s),
    L(V) = Delta_h V + S^{-1} f(grad_h V),

with centred differences in all three directions.  The weight is used in
the normalised form ``mu(z) / mu(-b)`` so that ``exp(2 lambda (b+theta)^2)``
never has to be represented.

Admissible states satisfy, for every component:

* ``V = psi0`` on the face ``s = 0``;
* the Neumann datum through the first layer, ``V_1 = psi0 + h_z psi1``
  (``neumann_order=1``) or the one-sided second-order relation
  ``-3 V_0 + 4 V_1 - V_2 = 2 h_z psi1`` (``neumann_order=2``);
* zero normal difference on the lateral faces and on ``z = b``
  (boundary nodes copy their inward neighbour).

Everything else inside is a free degree of freedom, optionally restricted to
the slab ``-b <= z <= -b + depth``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .basis import BasisSet
from .model import CauchyData, Grid3D, ShapeError

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    """Iteration cap reached; carries the trace and the last accepted state."""

    def __init__(self, message: str, trace, state=None):
        super().__init__(message)
        self.trace = trace
        self.state = state


@dataclass(frozen=True)
class CWF:
    """Carleman weight ``mu(z) = exp(2 lambda (z - theta)^2)`` on ``[-b, b]``."""

    lambda_: float
    theta: float
    b: float

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise ValueError("lambda must be positive")
        if not self.theta > self.b:
            raise ValueError("theta must exceed b")

    def log_weight(self, z) -> np.ndarray:
        return 2 * self.lambda_ * (np.asarray(z, dtype=float) - self.theta) ** 2

    def weight(self, z) -> np.ndarray:
        """Raw weight; overflows to ``inf`` for large ``lambda``."""
        with np.errstate(over="ignore"):
            return np.exp(self.log_weight(z))

    def normalized(self, z) -> np.ndarray:
        """``mu(z) / mu(-b)``, in ``(0, 1]`` on ``[-b, b]``."""
        return np.exp(self.log_weight(z) - self.log_weight(-self.b))

    @property
    def log_max(self) -> float:
        return float(self.log_weight(-self.b))

    @property
    def log_min(self) -> float:
        return float(self.log_weight(self.b))


@dataclass(frozen=True)
class StateVector:
    """Fourier components ``v_n`` on the grid, shape ``(N, nx, ny, nz)``."""

    grid: Grid3D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.ndim != 4 or v.shape[1:] != self.grid.shape:
            raise ShapeError(f"state shape {v.shape} does not match grid {self.grid.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def norm(self) -> float:
        """Discrete ``H^2`` norm over interior columns (z-derivatives by differences)."""
        g = self.grid
        v = self.values[:, 1:-1, 1:-1, :]
        dz = np.gradient(v, g.h_z, axis=-1)
        dzz = np.gradient(dz, g.h_z, axis=-1)
        total = sum(np.trapezoid(np.abs(a) ** 2, dx=g.h_z, axis=-1).sum() for a in (v, dz, dzz))
        return float(np.sqrt(g.h**2 * total))


# --- source geometry -------------------------------------------------------


def _offsets(points, alpha: float, d: float):
    r = np.array(points, dtype=float)
    r[..., 0] -= alpha
    r[..., 2] += d
    return r


def tilde_x(points, alpha: float, k: float, d: float) -> np.ndarray:
    """``grad log u_i = ik r/|r| - r/|r|^2`` with ``r = x - (alpha, 0, -d)``."""
    r = _offsets(points, alpha, d)
    rho = np.linalg.norm(r, axis=-1)[..., None]
    return 1j * k * r / rho - r / rho**2


def hat_x(points, alpha: float, k: float, d: float) -> np.ndarray:
    """``d/d alpha`` of :func:`tilde_x`."""
    r = _offsets(points, alpha, d)
    X, Y, Z = r[..., 0], r[..., 1], r[..., 2]
    rho2 = X * X + Y * Y + Z * Z
    rho = np.sqrt(rho2)
    unit = np.stack([-(Y * Y + Z * Z), X * Y, X * Z], axis=-1) / (rho**3)[..., None]
    inv = np.stack([X * X - Y * Y - Z * Z, 2 * X * Y, 2 * X * Z], axis=-1) / (rho2**2)[..., None]
    return 1j * k * unit - inv


@dataclass(frozen=True)
class SourceGeometryTensors:
    """Alpha-integrated couplings at interior nodes.

    ``P[m, n, :, ...] = int Psi_m Psi_n' tilde_x`` and
    ``Q[m, n, :, ...] = int Psi_m Psi_n hat_x``, both of shape
    ``(N, N, 3, nx-2, ny-2, nz-2)``.
    """

    P: np.ndarray
    Q: np.ndarray


def interior_points(grid: Grid3D) -> np.ndarray:
    X, Y, Z = np.meshgrid(grid.x[1:-1], grid.y[1:-1], grid.z[1:-1], indexing="ij")
    return np.stack([X, Y, Z], axis=-1)


def source_tensors(grid: Grid3D, basis: BasisSet, k: float, d: float) -> SourceGeometryTensors:
    pts = interior_points(grid)
    N = basis.N
    shape = (N, N, 3) + pts.shape[:-1]
    P = np.zeros(shape, dtype=complex)
    Q = np.zeros(shape, dtype=complex)
    for q, alpha in enumerate(basis.nodes):
        w = basis.weights[q]
        cp = w * np.outer(basis.psi[:, q], basis.dpsi[:, q])
        cq = w * np.outer(basis.psi[:, q], basis.psi[:, q])
        tx = np.moveaxis(tilde_x(pts, alpha, k, d), -1, 0)
        hx = np.moveaxis(hat_x(pts, alpha, k, d), -1, 0)
        P += cp[:, :, None, None, None, None] * tx[None, None]
        Q += cq[:, :, None, None, None, None] * hx[None, None]
    return SourceGeometryTensors(P, Q)


# --- difference operators on the interior -------------------------------------


def _c(a):
    return a[..., 1:-1, 1:-1, 1:-1]


def laplacian(V, step) -> np.ndarray:
    hx, hy, hz = step
    c = _c(V)
    return (
        (V[..., 2:, 1:-1, 1:-1] - 2 * c + V[..., :-2, 1:-1, 1:-1]) / hx**2
        + (V[..., 1:-1, 2:, 1:-1] - 2 * c + V[..., 1:-1, :-2, 1:-1]) / hy**2
        + (V[..., 1:-1, 1:-1, 2:] - 2 * c + V[..., 1:-1, 1:-1, :-2]) / hz**2
    )


def laplacian_adjoint(R, step, full_shape) -> np.ndarray:
    hx, hy, hz = step
    out = np.zeros(R.shape[:-3] + full_shape, dtype=R.dtype)
    out[..., 2:, 1:-1, 1:-1] += R / hx**2
    out[..., :-2, 1:-1, 1:-1] += R / hx**2
    out[..., 1:-1, 2:, 1:-1] += R / hy**2
    out[..., 1:-1, :-2, 1:-1] += R / hy**2
    out[..., 1:-1, 1:-1, 2:] += R / hz**2
    out[..., 1:-1, 1:-1, :-2] += R / hz**2
    out[..., 1:-1, 1:-1, 1:-1] -= 2 * (1 / hx**2 + 1 / hy**2 + 1 / hz**2) * R
    return out


def gradient(V, step) -> np.ndarray:
    """Centred differences; the result has a new axis of length 3 before the spatial axes."""
    hx, hy, hz = step
    return np.stack(
        [
            (V[..., 2:, 1:-1, 1:-1] - V[..., :-2, 1:-1, 1:-1]) / (2 * hx),
            (V[..., 1:-1, 2:, 1:-1] - V[..., 1:-1, :-2, 1:-1]) / (2 * hy),
            (V[..., 1:-1, 1:-1, 2:] - V[..., 1:-1, 1:-1, :-2]) / (2 * hz),
        ],
        axis=-4,
    )


def gradient_adjoint(Z, step, full_shape) -> np.ndarray:
    hx, hy, hz = step
    zx, zy, zz = Z[..., 0, :, :, :], Z[..., 1, :, :, :], Z[..., 2, :, :, :]
    out = np.zeros(Z.shape[:-4] + full_shape, dtype=Z.dtype)
    out[..., 2:, 1:-1, 1:-1] += zx / (2 * hx)
    out[..., :-2, 1:-1, 1:-1] -= zx / (2 * hx)
    out[..., 1:-1, 2:, 1:-1] += zy / (2 * hy)
    out[..., 1:-1, :-2, 1:-1] -= zy / (2 * hy)
    out[..., 1:-1, 1:-1, 2:] += zz / (2 * hz)
    out[..., 1:-1, 1:-1, :-2] -= zz / (2 * hz)
    return out


# --- nonlinearity ------------------------------------------------------------


def nonlinear_term_K(grad_v, basis: BasisSet, P, Q) -> np.ndarray:
    """``K = S^{-1} f`` for gradients ``grad_v`` of shape ``(N, 3, ...)``.

    ``f_m = 2 sum_{n,l} A[m,n,l] grad v_n . grad v_l
    + 2 sum_n (P[m,n] + Q[m,n]) . grad v_n`` where the dot products do not
    conjugate.  ``P`` and ``Q`` have shape ``(N, N, 3, ...)``.
    """
    dots = np.einsum("nd...,ld...->nl...", grad_v, grad_v)
    f = 2 * np.einsum("mnl,nl...->m...", basis.A, dots) + 2 * np.einsum("mnd...,nd...->m...", P + Q, grad_v)
    return np.tensordot(basis.S_inv, f, axes=(1, 0))


# --- the functional ------------------------------------------------------------


@dataclass
class CarlemanFunctional:
    """Discrete weighted functional with fixed Cauchy data.

    Parameters
    ----------
    grid : Grid3D
    basis : BasisSet
    tensors : SourceGeometryTensors
    cauchy : CauchyData
        Must live on the grid's (x, y) lattice.
    cwf : CWF
    neumann_order : {1, 2}
    omega1_depth : float or None
        Restrict free nodes to ``z <= -b + omega1_depth``; ``None`` frees the
        whole interior.
    """

    grid: Grid3D
    basis: BasisSet
    tensors: SourceGeometryTensors
    cauchy: CauchyData
    cwf: CWF
    neumann_order: int = 1
    omega1_depth: Optional[float] = 2.0
    suppress_nonlinearity: bool = False
    _A: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.grid
        if g.nz < 5:
            raise ShapeError("the functional needs nz >= 5")
        if self.cauchy.N != self.basis.N:
            raise ShapeError(f"Cauchy data carry N={self.cauchy.N}, basis has N={self.basis.N}")
        if not (
            self.cauchy.psi0.shape[1:] == (g.nx, g.ny)
            and np.allclose(self.cauchy.x, g.x, atol=1e-9)
            and np.allclose(self.cauchy.y, g.y, atol=1e-9)
        ):
            raise ShapeError("Cauchy lattice does not coincide with the grid's (x, y) nodes")
        if self.neumann_order not in (1, 2):
            raise ValueError("neumann_order must be 1 or 2")
        A = np.tensordot(self.basis.S_inv, self.basis.A, axes=(1, 0))
        self._A = 0.5 * (A + A.transpose(0, 2, 1))
        z = g.z[1:-1]
        self.weights = g.h * g.h * g.h_z * self.cwf.normalized(z)
        free = np.zeros(g.shape, dtype=bool)
        free[1:-1, 1:-1, 2:-1] = True
        if self.omega1_depth is not None:
            free &= (g.z <= -self.cwf.b + self.omega1_depth + 1e-9)[None, None, :]
        self.free = free
        # Residual rows 1..rows see free nodes; rows above only see fixed ones.
        layers = np.nonzero(free.any(axis=(0, 1)))[0]
        top = int(layers.max()) if layers.size else 1
        self.rows = min(top + 1, g.nz - 2)
        N = self.basis.N
        lin = np.tensordot(self.basis.S_inv, self.tensors.P + self.tensors.Q, axes=(1, 0))
        lin = lin.reshape((N, 3 * N) + lin.shape[3:])
        # flattened layouts: (m, n*3 + d, node)
        self._lin_lo = np.ascontiguousarray(lin[..., : self.rows]).reshape(N, 3 * N, -1)
        self._lin_hi = np.ascontiguousarray(lin[..., self.rows :]).reshape(N, 3 * N, -1)
        self._lin_lo_conj = self._lin_lo.conj()

    @property
    def N(self) -> int:
        return self.basis.N

    # constraints -------------------------------------------------------------

    def apply_constraints(self, V) -> np.ndarray:
        """Overwrite every dependent node from the free ones and the Cauchy data."""
        V = np.array(V, dtype=complex)
        V[:, 0, :, 2:] = V[:, 1, :, 2:]
        V[:, -1, :, 2:] = V[:, -2, :, 2:]
        V[:, :, 0, 2:] = V[:, :, 1, 2:]
        V[:, :, -1, 2:] = V[:, :, -2, 2:]
        V[..., -1] = V[..., -2]
        psi0, psi1 = self.cauchy.psi0, self.cauchy.psi1
        hz = self.grid.h_z
        V[..., 0] = psi0
        if self.neumann_order == 1:
            V[..., 1] = psi0 + hz * psi1
        else:
            V[..., 1] = (3 * psi0 + 2 * hz * psi1 + V[..., 2]) / 4
        return V

    def constraint_adjoint(self, G) -> np.ndarray:
        """Transpose of the linear part of :meth:`apply_constraints`, masked to free nodes."""
        G = np.array(G, dtype=complex)
        if self.neumann_order == 2:
            G[..., 2] += G[..., 1] / 4
        G[..., 0] = 0
        G[..., 1] = 0
        G[..., -2] += G[..., -1]
        G[..., -1] = 0
        G[:, :, -2, 2:] += G[:, :, -1, 2:]
        G[:, :, -1, 2:] = 0
        G[:, :, 1, 2:] += G[:, :, 0, 2:]
        G[:, :, 0, 2:] = 0
        G[:, -2, :, 2:] += G[:, -1, :, 2:]
        G[:, -1, :, 2:] = 0
        G[:, 1, :, 2:] += G[:, 0, :, 2:]
        G[:, 0, :, 2:] = 0
        return np.where(self.free, G, 0)

    def is_admissible(self, V, tol: float = 1e-12) -> bool:
        V = np.asarray(V)
        scale = max(1.0, float(np.abs(V).max()))
        return bool(np.abs(self.apply_constraints(V) - V).max() <= tol * scale)

    def step(self, V, direction, t: float) -> np.ndarray:
        """Admissible state ``V + t * direction`` (direction restricted to free nodes)."""
        return self.apply_constraints(np.asarray(V) + t * np.where(self.free, direction, 0))

    # residual, value, gradient -------------------------------------------------

    def _K(self, G, lin):
        N = self.N
        shape = G.shape[:1] + G.shape[2:]
        if self.suppress_nonlinearity:
            return np.zeros(shape, dtype=complex)
        Gf = G.reshape(N, 3, -1)
        dots = np.empty((N, N, Gf.shape[-1]), dtype=complex)
        for n in range(N):
            for l in range(n, N):
                dots[n, l] = Gf[n, 0] * Gf[l, 0] + Gf[n, 1] * Gf[l, 1] + Gf[n, 2] * Gf[l, 2]
                dots[l, n] = dots[n, l]
        K = self._A.reshape(N, N * N) @ dots.reshape(N * N, -1)
        Gj = Gf.reshape(3 * N, -1)
        for j in range(3 * N):
            K += lin[:, j] * Gj[j]
        K *= 2
        return K.reshape(shape)

    def _residual_lo(self, V):
        Vs = V[..., : self.rows + 2]
        G = gradient(Vs, self.grid.step)
        return laplacian(Vs, self.grid.step) + self._K(G, self._lin_lo), G

    def _residual_hi(self, V):
        Vs = V[..., self.rows :]
        return laplacian(Vs, self.grid.step) + self._K(gradient(Vs, self.grid.step), self._lin_hi)

    def residual(self, V) -> np.ndarray:
        """``L(V)`` at interior nodes, shape ``(N, nx-2, ny-2, nz-2)``."""
        V = np.asarray(V)
        lo = self._residual_lo(V)[0]
        if self.rows == self.grid.nz - 2:
            return lo
        return np.concatenate([lo, self._residual_hi(V)], axis=-1)

    def value(self, V) -> float:
        L = self.residual(V)
        return float(np.sum(np.abs(L) ** 2 * self.weights))

    def fixed_value(self, V) -> float:
        """Part of ``J`` from residual rows that no free node influences."""
        if self.rows == self.grid.nz - 2:
            return 0.0
        L = self._residual_hi(np.asarray(V))
        return float(np.sum(np.abs(L) ** 2 * self.weights[self.rows :]))

    def value_and_gradient(self, V, fixed: Optional[float] = None) -> tuple[float, np.ndarray]:
        """``J`` and its gradient over free nodes as ``dJ/dRe V + i dJ/dIm V``.

        ``fixed`` may pass a cached :meth:`fixed_value`, which is constant
        along any path that only moves free nodes.
        """
        V = np.asarray(V)
        step = self.grid.step
        L, G = self._residual_lo(V)
        rho = L * self.weights[: self.rows]
        J = float(np.sum((L.conj() * rho).real))
        J += self.fixed_value(V) if fixed is None else fixed
        slab = (self.grid.nx, self.grid.ny, self.rows + 2)
        out = laplacian_adjoint(rho, step, slab)
        if not self.suppress_nonlinearity:
            N = self.N
            r = rho.reshape(N, -1)
            T = (self._A.reshape(N, N * N).T @ r).reshape(N, N, -1)
            Gc = G.reshape(N, 3, -1).conj()
            Z = np.zeros((N, 3, r.shape[1]), dtype=complex)
            for n in range(N):
                for l in range(N):
                    Z[n] += T[n, l] * Gc[l]
            Z *= 2
            Zj = Z.reshape(3 * N, -1)
            for m in range(N):
                Zj += self._lin_lo_conj[m] * r[m]
            out += gradient_adjoint(2 * Z.reshape(G.shape), step, slab)
        full = np.zeros((self.N,) + self.grid.shape, dtype=complex)
        full[..., : self.rows + 2] = 2 * out
        return J, self.constraint_adjoint(full)

    def gradient(self, V) -> np.ndarray:
        return self.value_and_gradient(V)[1]


def residual_L(V: StateVector, functional: CarlemanFunctional) -> np.ndarray:
    return functional.residual(V.values)


def evaluate_J(V: StateVector, functional: CarlemanFunctional) -> float:
    return functional.value(V.values)


def gradient_J(V: StateVector, functional: CarlemanFunctional) -> np.ndarray:
    return functional.gradient(V.values)


# --- starting point and descent ----------------------------------------------


def cutoff(z, b: float) -> np.ndarray:
    """Smooth cutoff equal to 1 at ``z = -b`` and vanishing for ``z >= 0``."""
    z = np.asarray(z, dtype=float)
    t = z + b
    out = np.zeros_like(z)
    neg = z < 0
    with np.errstate(divide="ignore", over="ignore"):
        out[neg] = np.exp(2 * t[neg] ** 2 / (t[neg] ** 2 - b * b))
    return out


def starting_profile(cauchy: CauchyData, z: np.ndarray, b: float) -> np.ndarray:
    """``(psi0 + psi1 (z + b)) chi(z)`` for each component, shape ``(N, nx, ny, len(z))``."""
    z = np.asarray(z, dtype=float)
    chi = cutoff(z, b)
    return (cauchy.psi0[..., None] + cauchy.psi1[..., None] * (z + b)) * chi


def build_starting_point(cauchy: CauchyData, functional: CarlemanFunctional) -> StateVector:
    g = functional.grid
    raw = starting_profile(cauchy, g.z, -g.z[0])
    return StateVector(g, functional.apply_constraints(raw))


@dataclass
class DescentResult:
    state: StateVector
    trace: list
    reason: str

    @property
    def J(self) -> float:
        return self.trace[-1][2]


def minimize(
    V0: StateVector,
    functional: CarlemanFunctional,
    gamma0: float = 0.1,
    max_iter: int = 10000,
    tol_gamma: float = 1e-10,
    tol_j: float = 1e-10,
    callback: Optional[Callable[[int, float, float], None]] = None,
) -> DescentResult:
    """Gradient descent with step halving.

    A trial step that raises ``J`` is rejected and halves ``gamma``;
    otherwise it is accepted and ``gamma`` is kept.  The loop stops when
    ``gamma < tol_gamma`` or an accepted step changes ``J`` by less than
    ``tol_j``.  The trace holds ``(iteration, gamma, J)`` with ``J`` the
    value at the current accepted iterate.
    """
    V = functional.apply_constraints(V0.values)
    fixed = functional.fixed_value(V)
    J, g = functional.value_and_gradient(V, fixed)
    gamma = gamma0
    trace = [(0, gamma, J)]
    for it in range(1, max_iter + 1):
        trial = functional.step(V, -g, gamma)
        J_new, g_new = functional.value_and_gradient(trial, fixed)
        if J_new > J:
            gamma /= 2
            trace.append((it, gamma, J))
            if callback:
                callback(it, gamma, J)
            if gamma < tol_gamma:
                return DescentResult(StateVector(functional.grid, V), trace, "step size")
            continue
        change = J - J_new
        V, J, g = trial, J_new, g_new
        trace.append((it, gamma, J))
        if callback:
            callback(it, gamma, J)
        if change < tol_j:
            return DescentResult(StateVector(functional.grid, V), trace, "J change")
    raise NonConvergenceError(
        f"no convergence within {max_iter} iterations (J={J:.3e})", trace, StateVector(functional.grid, V)
    )
