"""Finite element discretisation of the complete electrode model.

The unknowns are the nodal potential ``u`` (P1 on the tetrahedral mesh) and
the electrode potentials ``U`` in the mean-free subspace, parameterised by
the basis ``e_1 - e_m`` (m = 2..M). The resulting system of size
``N + M - 1`` is symmetric positive definite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TetMesh

__all__ = [
    "ForwardSolveError",
    "ForwardSolution",
    "CEMSolver",
    "standard_patterns",
    "mean_free_basis",
    "assemble_cem_system",
    "solve_forward",
    "measurement_vector",
    "electrode_currents",
]


class ForwardSolveError(RuntimeError):
    """Factorisation or solve of the CEM system failed."""


@dataclass(frozen=True)
class ForwardSolution:
    u: np.ndarray
    U: np.ndarray


def standard_patterns(M: int) -> np.ndarray:
    """Current patterns ``I^m = e_1 - e_{m+1}``, one per row, shape (M-1, M)."""
    if M < 2:
        raise ValueError("need at least two electrodes")
    patterns = np.zeros((M - 1, M))
    patterns[:, 0] = 1.0
    patterns[np.arange(M - 1), np.arange(1, M)] = -1.0
    return patterns


def mean_free_basis(M: int) -> np.ndarray:
    """Columns ``e_1 - e_m``, m = 2..M; shape (M, M-1)."""
    return standard_patterns(M).T


def _check_positive(name, values, size):
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = np.full(size, float(values))
    if values.shape != (size,):
        raise ValueError(f"{name} must have length {size}, got shape {values.shape}")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        k = int(np.nonzero(~(values > 0))[0][0])
        raise ValueError(f"{name} must be strictly positive; entry {k} is {values[k]!r}")
    return values


def _check_patterns(patterns, M):
    patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
    if patterns.shape[1] != M:
        raise ValueError(f"current patterns must have {M} entries each")
    sums = np.abs(patterns.sum(axis=1))
    if np.any(sums > 1e-10 * np.maximum(1.0, np.abs(patterns).max(axis=1))):
        raise ValueError("current patterns must be mean-free (sum to zero)")
    return patterns


class _ElectrodeBlocks:
    """Conductivity independent electrode integrals, cached per mesh."""

    def __init__(self, mesh: TetMesh):
        self.mass = [mesh.boundary_mass_matrix(e) for e in mesh.electrodes]
        self.load = np.stack([mesh.boundary_load_vector(e) for e in mesh.electrodes])
        self.area = mesh.electrode_areas


_BLOCK_CACHE: dict[int, tuple[TetMesh, _ElectrodeBlocks]] = {}


def _electrode_blocks(mesh: TetMesh) -> _ElectrodeBlocks:
    hit = _BLOCK_CACHE.get(id(mesh))
    if hit is not None and hit[0] is mesh:
        return hit[1]
    blocks = _ElectrodeBlocks(mesh)
    if len(_BLOCK_CACHE) > 8:
        _BLOCK_CACHE.clear()
    _BLOCK_CACHE[id(mesh)] = (mesh, blocks)
    return blocks


def assemble_cem_system(mesh: TetMesh, sigma, z) -> sp.csc_matrix:
    """Assemble the symmetric CEM matrix for nodal conductivity ``sigma``."""
    M = mesh.num_electrodes
    if M < 2:
        raise ValueError("the electrode model needs at least two electrodes")
    sigma = _check_positive("conductivity", sigma, mesh.num_nodes)
    z = _check_positive("contact resistances", z, M)
    blocks = _electrode_blocks(mesh)

    # exact for P1 sigma: gradients are constant per tet
    k_sigma = mesh.stiffness_matrix(sigma[mesh.tets].mean(axis=1))
    a_uu = k_sigma
    for m in range(M):
        a_uu = a_uu + blocks.mass[m] / z[m]
    C = mean_free_basis(M)
    coupling = -(blocks.load.T / z) @ C
    a_bb = C.T @ np.diag(blocks.area / z) @ C
    return sp.bmat([[a_uu, sp.csr_matrix(coupling)],
                    [sp.csr_matrix(coupling.T), sp.csr_matrix(a_bb)]], format="csc")


class CEMSolver:
    """Factorised CEM system for one ``(sigma, z)``; reused for all patterns."""

    def __init__(self, mesh: TetMesh, sigma, z):
        self.mesh = mesh
        self.sigma = _check_positive("conductivity", sigma, mesh.num_nodes)
        self.z = _check_positive("contact resistances", z, mesh.num_electrodes)
        self.matrix = assemble_cem_system(mesh, self.sigma, self.z)
        try:
            self._lu = spla.splu(self.matrix, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:
            d = self.matrix.diagonal()
            raise ForwardSolveError(
                f"CEM factorisation failed ({exc}); diagonal range "
                f"[{d.min():.3e}, {d.max():.3e}], sigma range "
                f"[{self.sigma.min():.3e}, {self.sigma.max():.3e}]"
            ) from exc

    def solve(self, patterns):
        """Return ``(u, U)`` with shapes (P, N) and (P, M)."""
        mesh = self.mesh
        M = mesh.num_electrodes
        patterns = _check_patterns(patterns, M)
        C = mean_free_basis(M)
        rhs = np.zeros((mesh.num_nodes + M - 1, patterns.shape[0]))
        rhs[mesh.num_nodes:] = C.T @ patterns.T
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise ForwardSolveError("CEM solve produced non-finite values")
        u = x[: mesh.num_nodes].T.copy()
        U = (C @ x[mesh.num_nodes:]).T
        return u, U


def solve_forward(mesh: TetMesh, sigma, z, patterns) -> list[ForwardSolution]:
    u, U = CEMSolver(mesh, sigma, z).solve(patterns)
    return [ForwardSolution(ui, Ui) for ui, Ui in zip(u, U)]


def measurement_vector(solutions) -> np.ndarray:
    """Stack electrode potentials pattern by pattern, length ``P * M``."""
    if isinstance(solutions, np.ndarray):
        return np.asarray(solutions, dtype=float).reshape(-1)
    solutions = list(solutions)
    if not solutions:
        raise ValueError("no forward solutions given")
    M = len(solutions[0].U)
    if len(solutions) != M - 1:
        raise ValueError(f"expected M - 1 = {M - 1} solutions, got {len(solutions)}")
    return np.concatenate([s.U for s in solutions])


def electrode_currents(mesh: TetMesh, z, solution: ForwardSolution) -> np.ndarray:
    """Currents recovered from the Robin condition, ``int_{E_m} (U_m - u) / z_m``."""
    blocks = _electrode_blocks(mesh)
    z = np.asarray(z, dtype=float)
    return (blocks.area * solution.U - blocks.load @ solution.u) / z
