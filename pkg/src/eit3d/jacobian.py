"""Jacobian of the electrode potentials with respect to (sigma, z).

Derivatives are sampled with adjoint fields. For a mean-free measurement
functional ``g . U`` the adjoint field is the CEM solution driven by the
current ``g``; since the ``M - 1`` current patterns span the mean-free
space, every adjoint field is a linear combination of the forward fields
and no extra solves are needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import CEMSolver, _check_patterns, _electrode_blocks
from .mesh import TetMesh

__all__ = ["JacobianPair", "assemble_jacobian", "jacobian_from_solution"]


@dataclass(frozen=True)
class JacobianPair:
    J1: np.ndarray  # (M(M-1), N) w.r.t. nodal conductivities
    J2: np.ndarray  # (M(M-1), M) w.r.t. contact resistances
    sigma: np.ndarray
    z: np.ndarray
    U: np.ndarray  # stacked forward measurement at (sigma, z)

    @property
    def J(self) -> np.ndarray:
        return np.hstack([self.J1, self.J2])


def jacobian_from_solution(mesh: TetMesh, z, patterns, u, U):
    """Assemble ``(J1, J2)`` from forward fields ``u`` (P, N) and ``U`` (P, M)."""
    M = mesh.num_electrodes
    patterns = _check_patterns(patterns, M)
    P = patterns.shape[0]
    if np.linalg.matrix_rank(patterns) != M - 1:
        raise ValueError("the current patterns must span the mean-free space (M - 1 "
                         "linearly independent patterns)")
    z = np.asarray(z, dtype=float)

    # coefficients expressing the adjoint currents e_m - 1/M as pattern combinations
    g = np.eye(M) - 1.0 / M
    coef = np.linalg.lstsq(patterns.T, g, rcond=None)[0]  # (P, M)
    w = coef.T @ u  # (M, N) adjoint potentials
    W = coef.T @ U  # (M, M) adjoint electrode potentials

    # d U^i_m / d sigma_k = - sum_{K containing k} |K|/4 grad u^i . grad w^m
    grad_u = mesh.element_gradients(u)  # (K, P, 3)
    grad_w = mesh.element_gradients(w)  # (K, M, 3)
    dots = np.einsum("kpd,kmd->kpm", grad_u, grad_w)
    dots *= -(mesh.volumes / 4.0)[:, None, None]
    J1 = np.asarray(mesh.node_tet_incidence @ dots.reshape(mesh.num_tets, P * M)).T

    # d U^i_m / d z_n = z_n^-2 int_{E_n} (u^i - U^i_n)(w^m - W^m_n) dS
    blocks = _electrode_blocks(mesh)
    J2 = np.empty((P, M, M))
    for n in range(M):
        mass, load, area = blocks.mass[n], blocks.load[n], blocks.area[n]
        uMw = u @ (mass @ w.T)  # (P, M)
        lu = u @ load  # (P,)
        lw = w @ load  # (M,)
        integral = (uMw - np.outer(lu, W[:, n]) - np.outer(U[:, n], lw)
                    + area * np.outer(U[:, n], W[:, n]))
        J2[:, :, n] = integral / z[n] ** 2
    return J1, J2.reshape(P * M, M)


def assemble_jacobian(mesh: TetMesh, sigma, z, patterns, solver: CEMSolver | None = None):
    """Jacobian pair at ``(sigma, z)``; reuses ``solver`` when given."""
    if solver is None:
        solver = CEMSolver(mesh, sigma, z)
    u, U = solver.solve(patterns)
    J1, J2 = jacobian_from_solution(mesh, solver.z, patterns, u, U)
    return JacobianPair(J1=J1, J2=J2, sigma=solver.sigma.copy(), z=solver.z.copy(),
                        U=U.reshape(-1))
