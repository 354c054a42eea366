"""Orthonormal basis in ``L2(a1, a2)`` built from ``alpha**n * exp(alpha)``.

Each basis function is ``Psi_n(alpha) = exp(alpha) * p_n(alpha)`` with
``p_n`` a degree-``n`` polynomial, so its derivative ``exp(alpha) * (p_n +
p_n')`` lies in the span of ``Psi_0..Psi_n``.  That is what makes the
derivative matrix ``S_N`` unit upper-triangular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Legendre

from .model import DomainError, ShapeError, gauss_legendre

MAX_N = 12


class ConditioningError(ArithmeticError):
    """Gram-Schmidt lost linear independence at a given index."""

    def __init__(self, index: int, ratio: float):
        super().__init__(f"Gram-Schmidt breakdown at index {index}: residual/original norm = {ratio:.3e}")
        self.index = index
        self.ratio = ratio


@dataclass(frozen=True)
class BasisSet:
    """The truncated basis together with its quadrature and coupling integrals.

    Attributes
    ----------
    nodes, weights : ndarray
        Gauss-Legendre rule on ``[a1, a2]`` used for every alpha-integral.
    psi, dpsi : ndarray, shape (N, Q)
        ``Psi_n`` and ``Psi_n'`` at the nodes.
    S : ndarray, shape (N, N)
        ``S[m, n] = <Psi_n', Psi_m>``.
    A : ndarray, shape (N, N, N)
        ``A[m, n, l] = int Psi_m Psi_n Psi_l'``.
    B, C : ndarray, shape (N, N)
        ``B[m, n] = int Psi_m Psi_n'`` and ``C[m, n] = int Psi_m Psi_n``.
    gs_ratios : ndarray, shape (N,)
        Norm kept by each vector during orthogonalisation (conditioning trace).
    """

    a1: float
    a2: float
    N: int
    nodes: np.ndarray
    weights: np.ndarray
    polys: tuple
    psi: np.ndarray
    dpsi: np.ndarray
    S: np.ndarray
    S_inv: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    gs_ratios: np.ndarray

    def evaluate(self, alpha, derivative: bool = False) -> np.ndarray:
        """``Psi_n(alpha)`` (or ``Psi_n'``) for all n; shape ``(N,) + alpha.shape``."""
        alpha = np.asarray(alpha, dtype=float)
        e = np.exp(alpha)
        if derivative:
            return np.stack([e * (p(alpha) + p.deriv()(alpha)) for p in self.polys])
        return np.stack([e * p(alpha) for p in self.polys])

    def source_rule(self, n_src: int) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes/weights for ``n_src`` source positions."""
        return gauss_legendre(self.a1, self.a2, n_src)


def build_basis(a1: float, a2: float, N: int, quad_points: int | None = None) -> BasisSet:
    """Orthonormalise ``alpha**n * exp(alpha)``, n = 0..N-1, on ``[a1, a2]``.

    Modified Gram-Schmidt with one re-orthogonalisation pass runs on the
    function samples at a Gauss-Legendre rule with ``quad_points`` nodes
    (default ``max(64, 8 N)``).  The resulting polynomial factors are then
    recovered exactly in a Legendre basis for evaluation off the nodes.
    """
    if not a1 < a2:
        raise DomainError("need a1 < a2")
    if not 1 <= N <= MAX_N:
        raise DomainError(f"N must lie in [1, {MAX_N}], got {N}")
    quad_points = quad_points or max(64, 8 * N)
    if quad_points < 8 * N:
        raise DomainError(f"quad_points must be >= 8 N = {8 * N}")

    nodes, weights = gauss_legendre(a1, a2, quad_points)
    sw = np.sqrt(weights)
    phis = np.stack([nodes**n * np.exp(nodes) for n in range(N)]) * sw
    basis = np.zeros_like(phis)
    ratios = np.zeros(N)
    for n in range(N):
        v = phis[n].copy()
        norm0 = np.linalg.norm(v)
        for _ in range(2):
            for m in range(n):
                v -= (basis[m] @ v) * basis[m]
        norm = np.linalg.norm(v)
        ratios[n] = norm / norm0
        if ratios[n] < 1e-13:
            raise ConditioningError(n, ratios[n])
        basis[n] = v / norm

    psi = basis / sw
    polys = tuple(
        Legendre.fit(nodes, psi[n] * np.exp(-nodes), deg=n, domain=[a1, a2]) for n in range(N)
    )
    dpsi = np.stack([np.exp(nodes) * (p(nodes) + p.deriv()(nodes)) for p in polys])
    psi = np.stack([np.exp(nodes) * p(nodes) for p in polys])

    w = weights
    C = np.einsum("mq,nq,q->mn", psi, psi, w)
    B = np.einsum("mq,nq,q->mn", psi, dpsi, w)
    A = np.einsum("mq,nq,lq,q->mnl", psi, psi, dpsi, w)
    S = B.copy()
    S_inv = np.linalg.inv(S)
    return BasisSet(a1, a2, N, nodes, weights, polys, psi, dpsi, S, S_inv, A, B, C, ratios)


def _rule_for(alpha, basis: BasisSet, n: int) -> tuple[np.ndarray, np.ndarray]:
    if alpha is None:
        if n != basis.nodes.size:
            raise ShapeError(f"{n} samples do not match the {basis.nodes.size}-node basis quadrature")
        return basis.nodes, basis.weights
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size != n:
        raise ShapeError(f"{n} samples for {alpha.size} source positions")
    nodes, w = basis.source_rule(n)
    order = np.argsort(alpha)
    if not np.allclose(alpha[order], nodes, rtol=0, atol=1e-9):
        raise ShapeError("source positions are not the Gauss-Legendre nodes of [a1, a2]")
    weights = np.empty_like(w)
    weights[order] = w
    return alpha, weights


def project_onto_basis(samples, basis: BasisSet, alpha=None) -> np.ndarray:
    """Fourier coefficients ``<f, Psi_n>`` from samples at Gauss-Legendre nodes.

    ``samples`` has the source axis first; trailing axes (lattice points)
    are carried through, so the result has shape ``(N,) + samples.shape[1:]``.
    Without ``alpha`` the samples must sit on the basis quadrature nodes.
    """
    samples = np.asarray(samples)
    nodes, w = _rule_for(alpha, basis, samples.shape[0])
    psi = basis.evaluate(nodes)
    return np.tensordot(psi * w, samples, axes=(1, 0))


def synthesize_from_basis(coeffs, basis: BasisSet, alpha):
    """``sum_n coeffs[n] * Psi_n(alpha)``; coefficients may carry trailing axes."""
    alpha_arr = np.asarray(alpha, dtype=float)
    tol = 1e-12 * (basis.a2 - basis.a1)
    if np.any(alpha_arr < basis.a1 - tol) or np.any(alpha_arr > basis.a2 + tol):
        raise DomainError(f"alpha outside [{basis.a1}, {basis.a2}]")
    coeffs = np.asarray(coeffs)
    if coeffs.shape[0] != basis.N:
        raise ShapeError(f"expected {basis.N} coefficients, got {coeffs.shape[0]}")
    psi = basis.evaluate(alpha_arr)
    return np.tensordot(psi, coeffs, axes=(0, 0)) if psi.ndim > 1 else psi @ coeffs


def invariant_report(basis: BasisSet) -> dict:
    """Numerical check of orthonormality and the structure of ``S_N``."""
    N = basis.N
    return {
        "N": N,
        "orthonormality": float(np.abs(basis.C - np.eye(N)).max()),
        "diag_S": float(np.abs(np.diag(basis.S) - 1).max()),
        "lower_S": float(np.abs(np.tril(basis.S, -1)).max()) if N > 1 else 0.0,
        "det_S": float(np.linalg.det(basis.S)),
        "S_Sinv": float(np.abs(basis.S @ basis.S_inv - np.eye(N)).max()),
        "gs_min_ratio": float(basis.gs_ratios.min()),
    }
