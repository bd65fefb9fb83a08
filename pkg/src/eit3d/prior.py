"""Edge-preferring penalties and the lagged-diffusivity prior matrix.

For a penalty ``R(sigma) = int r(|grad sigma|) dx`` the gradient reads
``H(sigma) sigma`` where ``H`` is the stiffness matrix of the operator
``-div(c grad)`` with ``c(t) = r'(t) / t`` evaluated elementwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TetMesh

__all__ = [
    "EdgeFunction",
    "PriorMatrix",
    "PriorFactorizationError",
    "DEFAULT_THRESHOLDS",
    "edge_weight",
    "penalty",
    "assemble_H",
    "apply_H_inverse",
]

DEFAULT_THRESHOLDS = {"tv": 1e-6, "pm": 5e-3, "quadratic": 1.0}


class PriorFactorizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EdgeFunction:
    """Penalty ``r`` of the gradient magnitude.

    ``kind`` is ``"tv"`` (``sqrt(T^2 + t^2)``), ``"pm"`` (Perona-Malik,
    ``T^2/2 log(1 + (t/T)^2)``) or ``"quadratic"`` (``t^2/2``, ignores T).
    """

    kind: str = "pm"
    T: float | None = None

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in DEFAULT_THRESHOLDS:
            raise ValueError(f"unknown edge function {self.kind!r}; use tv, pm or quadratic")
        object.__setattr__(self, "kind", kind)
        if self.T is None:
            object.__setattr__(self, "T", DEFAULT_THRESHOLDS[kind])
        if not self.T > 0:
            raise ValueError("threshold T must be positive")

    def r(self, t):
        t = np.asarray(t, dtype=float)
        T = self.T
        if self.kind == "tv":
            return np.sqrt(T * T + t * t)
        if self.kind == "pm":
            return 0.5 * T * T * np.log1p((t / T) ** 2)
        return 0.5 * t * t

    def weight(self, t):
        t = np.asarray(t, dtype=float)
        T = self.T
        if self.kind == "tv":
            return 1.0 / np.sqrt(T * T + t * t)
        if self.kind == "pm":
            return 1.0 / (1.0 + (t / T) ** 2)
        return np.ones_like(t)


def edge_weight(edge_fn: EdgeFunction, t):
    """``c(t) = r'(t)/t``, with the analytic limit at ``t = 0``."""
    return edge_fn.weight(t)


def penalty(mesh: TetMesh, sigma, edge_fn: EdgeFunction) -> float:
    """``R(sigma) = sum_K |K| r(|grad sigma|_K)``."""
    grad = mesh.element_gradients(sigma)
    return float(np.sum(mesh.volumes * edge_fn.r(np.linalg.norm(grad, axis=1))))


class PriorMatrix:
    """Prior matrix with identity rows and columns on the Dirichlet nodes.

    ``matrix`` is the eliminated, invertible matrix; ``raw`` is the
    un-eliminated one satisfying ``grad R(sigma) = raw @ sigma``. The sparse
    factorisation is computed lazily and cached.
    """

    def __init__(self, raw: sp.csr_matrix, dirichlet, sigma, edge_fn: EdgeFunction):
        self.raw = raw.tocsr()
        self.dirichlet = np.unique(np.asarray(dirichlet, dtype=np.int64))
        self.sigma = np.asarray(sigma, dtype=float).copy()
        self.edge_fn = edge_fn
        n = raw.shape[0]
        keep = np.ones(n)
        keep[self.dirichlet] = 0.0
        D = sp.diags(keep)
        self.matrix = (D @ self.raw @ D + sp.diags(1.0 - keep)).tocsc()
        self.free = keep.astype(bool)

    @property
    def shape(self):
        return self.matrix.shape

    @cached_property
    def _factor(self):
        try:
            lu = spla.splu(self.matrix, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise PriorFactorizationError(
                f"prior matrix factorisation failed ({exc}); check that sigma is valid and "
                "the Dirichlet node set is nonempty"
            ) from exc
        diag_u = lu.U.diagonal()
        if np.any(diag_u <= 0) or not np.all(np.isfinite(diag_u)):
            raise PriorFactorizationError("prior matrix is not positive definite")
        return lu

    def solve(self, v):
        v = np.asarray(v, dtype=float)
        return self._factor.solve(v)


def assemble_H(mesh: TetMesh, sigma, edge_fn: EdgeFunction, dirichlet_nodes=None) -> PriorMatrix:
    """Lagged-diffusivity matrix ``H(sigma)``.

    ``dirichlet_nodes`` defaults to all nodes on electrode patches.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (mesh.num_nodes,):
        raise ValueError(f"sigma must have one value per node ({mesh.num_nodes})")
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise ValueError("sigma must be strictly positive")
    if dirichlet_nodes is None:
        dirichlet_nodes = mesh.electrode_nodes
    dirichlet_nodes = np.asarray(dirichlet_nodes, dtype=np.int64)
    if dirichlet_nodes.size == 0:
        raise ValueError("the Dirichlet node set is empty; H would be singular")
    grad = mesh.element_gradients(sigma)
    c = edge_fn.weight(np.linalg.norm(grad, axis=1))
    return PriorMatrix(mesh.stiffness_matrix(c), dirichlet_nodes, sigma, edge_fn)


def apply_H_inverse(H: PriorMatrix, v) -> np.ndarray:
    return H.solve(v)
