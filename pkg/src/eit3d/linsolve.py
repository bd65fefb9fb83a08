"""Whitened, projected linear systems and the priorconditioned inner solver.

The contact resistances are eliminated by projecting onto the orthogonal
complement of ``range(B2)``; the conductivity update is then computed by
LSQR on ``A L^{-1}`` where ``H = L^T L``. The factor ``L`` is never formed:
the bidiagonalisation runs in the ``H``-inner product and only needs
products with ``H^{-1}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from .jacobian import JacobianPair
from .prior import PriorMatrix
from .serialize import write_csv

__all__ = [
    "NoiseModel",
    "LinearizedSystem",
    "InnerResult",
    "RankDeficientError",
    "build_linearized_system",
    "priorconditioned_solve",
    "recover_contact_resistances",
    "write_trace_csv",
]


class RankDeficientError(ValueError):
    """The whitened contact-resistance Jacobian does not have full column rank."""


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal Gaussian noise covariance."""

    variance: np.ndarray

    def __post_init__(self):
        var = np.asarray(self.variance, dtype=float).ravel()
        if var.size == 0 or not np.all(np.isfinite(var)) or np.any(var <= 0):
            raise ValueError("noise variances must be positive and finite")
        object.__setattr__(self, "variance", var)

    @property
    def inv_sqrt(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.variance)

    def whiten(self, x):
        x = np.asarray(x, dtype=float)
        w = self.inv_sqrt
        return x * (w[:, None] if x.ndim == 2 else w)

    def residual(self, V, U) -> float:
        """``||Gamma^{-1/2}(V - U)||``."""
        return float(np.linalg.norm(self.whiten(np.asarray(V) - np.asarray(U))))


@dataclass
class LinearizedSystem:
    B1: np.ndarray
    B2: np.ndarray
    y_white: np.ndarray
    sigma0: np.ndarray
    q_basis: np.ndarray  # orthonormal basis of range(B2)
    r_factor: np.ndarray  # B2 = q_basis @ r_factor
    A: np.ndarray
    b: np.ndarray  # Q y_white
    b_tilde: np.ndarray  # Q (y_white - B1 sigma0)

    def project(self, v):
        """Apply ``Q = I - B2 (B2^T B2)^{-1} B2^T``."""
        v = np.asarray(v, dtype=float)
        return v - self.q_basis @ (self.q_basis.T @ v)

    def residual(self, sigma) -> float:
        return float(np.linalg.norm(self.A @ sigma - self.b))


def build_linearized_system(jac: JacobianPair, V, U_point, sigma_j, z_j, sigma0,
                            noise: NoiseModel) -> LinearizedSystem:
    """Linearise around ``(sigma_j, z_j)``: ``y = V - U + J1 sigma_j + J2 z_j``."""
    V = np.asarray(V, dtype=float)
    U_point = np.asarray(U_point, dtype=float)
    nmeas = jac.J1.shape[0]
    for name, vec in (("V", V), ("U", U_point), ("noise", noise.variance)):
        if vec.shape != (nmeas,):
            raise ValueError(f"{name} has length {vec.shape[0]}, expected {nmeas}")
    sigma_j = np.asarray(sigma_j, dtype=float)
    z_j = np.asarray(z_j, dtype=float)
    sigma0 = np.broadcast_to(np.asarray(sigma0, dtype=float), sigma_j.shape).copy()

    y = V - U_point + jac.J1 @ sigma_j + jac.J2 @ z_j
    B1 = noise.whiten(jac.J1)
    B2 = noise.whiten(jac.J2)
    yw = noise.whiten(y)

    qb, rb = qr(B2, mode="economic")
    d = np.abs(np.diag(rb))
    if d.min() <= 1e-10 * d.max():
        raise RankDeficientError(
            f"contact-resistance block is rank deficient (|R_ii| min/max = {d.min() / d.max():.2e}); "
            "check the electrode configuration"
        )
    A = B1 - qb @ (qb.T @ B1)
    b = yw - qb @ (qb.T @ yw)
    r0 = yw - B1 @ sigma0
    b_tilde = r0 - qb @ (qb.T @ r0)
    return LinearizedSystem(B1=B1, B2=B2, y_white=yw, sigma0=sigma0, q_basis=qb, r_factor=rb,
                            A=A, b=b, b_tilde=b_tilde)


def recover_contact_resistances(system: LinearizedSystem, sigma) -> np.ndarray:
    """``z = (B2^T B2)^{-1} B2^T (Gamma^{-1/2} y - B1 sigma)`` via the thin QR."""
    rhs = system.y_white - system.B1 @ np.asarray(sigma, dtype=float)
    return solve_triangular(system.r_factor, system.q_basis.T @ rhs)


@dataclass
class InnerResult:
    sigma: np.ndarray
    iterations: int
    trace: list = field(default_factory=list)
    converged: bool = False
    stagnated: bool = False

    @property
    def flag(self) -> str:
        if self.converged:
            return "discrepancy reached"
        if self.stagnated:
            return "stagnated"
        return "discrepancy not reached"


def priorconditioned_solve(system: LinearizedSystem, H: PriorMatrix, eps: float,
                           max_iter: int = 200, stagnation_tol: float = 1e-12,
                           atol: float = 1e-14) -> InnerResult:
    """LSQR for ``min ||A sigma - b||`` over ``sigma0 + H^{-1} range(A^T)``.

    Iterates are those of plain LSQR applied to ``A L^{-1}`` (``H = L^T L``)
    started from zero. The Dirichlet nodes of ``H`` are kept at ``sigma0``:
    the adjoint products are zeroed there before ``H^{-1}`` is applied.
    ``trace[k]`` is the LSQR residual estimate ``||A sigma_k - b||``.

    Besides the discrepancy test the iteration stops, flagged as stagnated,
    when the residual decrease falls below ``stagnation_tol`` (relative) or
    when the least-squares optimality test ``||(A L^-1)^T r|| <= atol
    ||A L^-1|| ||r||`` holds, i.e. the residual is at its floor.
    """
    if not eps > 0:
        raise ValueError("discrepancy target must be positive")
    A = system.A
    free = H.free.astype(float)
    x = np.zeros(A.shape[1])

    u = system.b_tilde.copy()
    beta = float(np.linalg.norm(u))
    trace = [beta]
    if beta <= eps or beta == 0.0:
        return InnerResult(system.sigma0 + x, 0, trace, converged=True)
    u /= beta
    s = free * (A.T @ u)
    p = H.solve(s)
    alpha = float(np.sqrt(max(s @ p, 0.0)))
    if alpha == 0.0:
        return InnerResult(system.sigma0 + x, 0, trace, stagnated=True)
    v, hv = p / alpha, s / alpha
    w = v.copy()
    phibar, rhobar = beta, alpha

    anorm = 0.0
    converged = stagnated = False
    k = 0
    while k < max_iter:
        k += 1
        anorm = np.hypot(anorm, alpha)
        u = A @ v - alpha * u
        beta = float(np.linalg.norm(u))
        if beta > 0:
            u /= beta
            s = free * (A.T @ u) - beta * hv
            p = H.solve(s)
            alpha = float(np.sqrt(max(s @ p, 0.0)))
            if alpha > 0:
                v, hv = p / alpha, s / alpha
        anorm = np.hypot(anorm, beta)

        rho = np.hypot(rhobar, beta)
        c, sn = rhobar / rho, beta / rho
        theta = sn * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = sn * phibar

        x = x + (phi / rho) * w
        w = v - (theta / rho) * w
        prev = trace[-1]
        trace.append(float(phibar))

        if phibar <= eps:
            converged = True
            break
        arnorm = alpha * abs(c) * phibar
        if (beta == 0.0 or alpha == 0.0 or prev - phibar < stagnation_tol * prev
                or arnorm <= atol * anorm * phibar):
            stagnated = True
            break
    return InnerResult(system.sigma0 + x, k, trace, converged=converged, stagnated=stagnated)


def write_trace_csv(path, traces) -> None:
    """CSV of ``(outer, iteration, residual)``; ``traces`` is a list of lists."""
    rows = [(j, k, float(r)) for j, tr in enumerate(traces) for k, r in enumerate(tr)]
    write_csv(path, ["outer", "iteration", "residual"], rows)
