"""Sequential linearisation with one lagged-diffusivity step per outer iteration.

Each outer step linearises the forward map at the current iterate, freezes
the edge weights of the prior at that iterate, runs the priorconditioned
inner solver to the noise level and updates the contact resistances from
the decoupled normal equations. The loop ends when the nonlinear residual
drops below ``tau * sqrt(M (M - 1))``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .fem import CEMSolver, standard_patterns
from .jacobian import JacobianPair, jacobian_from_solution
from .linsolve import (NoiseModel, build_linearized_system, priorconditioned_solve,
                       recover_contact_resistances)
from .mesh import TetMesh
from .prior import EdgeFunction, assemble_H

__all__ = [
    "ReconstructionConfig",
    "ReconstructionState",
    "ReconstructionResult",
    "ReconstructionError",
    "fit_homogeneous",
    "safeguard_state",
    "reconstruct",
]

log = logging.getLogger(__name__)

SIGMA_GRID = np.logspace(-3, 3, 13)
Z_GRID = np.logspace(-6, 1, 15)
Z_FLOOR = 1e-6


class ReconstructionError(RuntimeError):
    """Non-finite state encountered; ``state`` holds the last snapshot."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class ReconstructionConfig:
    edge: str = "pm"
    T: float | None = None
    tau: float = 1.0
    max_outer: int = 20
    inner_max_iter: int = 200
    sigma_floor_fraction: float = 1e-3
    steps_per_linearization: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be at least 1")
        if self.sigma_floor_fraction <= 0:
            raise ValueError("sigma_floor_fraction must be positive")
        if self.max_outer < 1 or self.inner_max_iter < 1 or self.steps_per_linearization < 1:
            raise ValueError("iteration limits must be positive")
        EdgeFunction(self.edge, self.T)  # validates edge kind and T

    @property
    def edge_function(self) -> EdgeFunction:
        return EdgeFunction(self.edge, self.T)


@dataclass
class ReconstructionState:
    j: int
    sigma: np.ndarray
    z: np.ndarray
    U: np.ndarray
    E_history: list = field(default_factory=list)
    inner_counts: list = field(default_factory=list)
    inner_traces: list = field(default_factory=list)

    def snapshot(self) -> dict:
        return {
            "j": self.j,
            "sigma": self.sigma.tolist(),
            "z": self.z.tolist(),
            "E_history": list(self.E_history),
            "inner_counts": list(self.inner_counts),
        }


@dataclass
class ReconstructionResult:
    sigma: np.ndarray
    z: np.ndarray
    diagnostics: dict
    state: ReconstructionState
    timings: dict
    snapshots: list = field(default_factory=list)


# ---------------------------------------------------------------------------
def fit_homogeneous(mesh: TetMesh, V, noise: NoiseModel, patterns=None):
    """Best constant ``(sigma0, z0)`` for the data in the whitened norm.

    Coarse log grid followed by Nelder-Mead in log10 coordinates. Uses the
    exact scaling ``U(s, z) = U(1, s z) / s`` so only the product ``s z``
    requires a new factorisation.
    """
    M = mesh.num_electrodes
    if patterns is None:
        patterns = standard_patterns(M)
    V = np.asarray(V, dtype=float)
    if V.shape != (M * (M - 1),):
        raise ValueError(f"data must have length M(M-1) = {M * (M - 1)}")
    ones = np.ones(mesh.num_nodes)
    cache: dict[float, np.ndarray] = {}

    def unit_data(p):
        if p not in cache:
            _, U = CEMSolver(mesh, ones, np.full(M, p)).solve(patterns)
            cache[p] = U.reshape(-1)
        return cache[p]

    def objective(logs):
        s, zz = 10.0 ** logs[0], 10.0 ** logs[1]
        try:
            U = unit_data(float(s * zz)) / s
        except (ValueError, RuntimeError):
            return np.inf
        e = noise.residual(V, U)
        return e if np.isfinite(e) else np.inf

    best, best_val = None, np.inf
    for s in SIGMA_GRID:
        for zz in Z_GRID:
            val = objective((math.log10(s), math.log10(zz)))
            if val < best_val:
                best, best_val = (math.log10(s), math.log10(zz)), val
    if best is None:
        raise ReconstructionError("homogeneous fit failed: no finite residual on the grid; "
                                  "check that data and mesh belong together")
    res = minimize(objective, np.array(best), method="Nelder-Mead",
                   options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 4000,
                            "initial_simplex": np.array(best) + np.array([[0, 0], [0.25, 0], [0, 0.25]])})
    x = res.x if res.fun <= best_val else np.array(best)
    return float(10.0 ** x[0]), float(10.0 ** x[1])


def safeguard_state(sigma, z, sigma0):
    """Clamp ``sigma >= 1e-3 sigma0`` and ``z >= 1e-6``; return clamp counts."""
    return _safeguard(sigma, z, sigma0, 1e-3)


def _safeguard(sigma, z, sigma0, fraction):
    sigma = np.asarray(sigma, dtype=float).copy()
    z = np.asarray(z, dtype=float).copy()
    floor = fraction * float(np.min(sigma0))
    low_s = sigma < floor
    low_z = z < Z_FLOOR
    sigma[low_s] = floor
    z[low_z] = Z_FLOOR
    return sigma, z, {"sigma": int(low_s.sum()), "z": int(low_z.sum())}


# ---------------------------------------------------------------------------
def reconstruct(mesh: TetMesh, V, noise: NoiseModel, patterns=None,
                config: ReconstructionConfig | None = None, initial=None,
                keep_snapshots=False) -> ReconstructionResult:
    """Edge-preferring reconstruction of ``(sigma, z)`` from data ``V``.

    ``initial`` optionally gives ``(sigma0, z0)`` and skips the homogeneous
    fit.
    """
    config = config or ReconstructionConfig()
    M = mesh.num_electrodes
    if patterns is None:
        patterns = standard_patterns(M)
    V = np.asarray(V, dtype=float)
    if V.shape != (M * (M - 1),):
        raise ValueError(f"data must have length M(M-1) = {M * (M - 1)}")
    if not np.all(np.isfinite(V)):
        raise ValueError(f"data contain non-finite entries (first at index "
                         f"{int(np.nonzero(~np.isfinite(V))[0][0])})")
    edge_fn = config.edge_function
    eps = math.sqrt(M * (M - 1))
    target = config.tau * eps
    timings = {}

    t0 = time.perf_counter()
    if initial is None:
        s0, z0 = fit_homogeneous(mesh, V, noise, patterns)
    else:
        s0, z0 = (float(v) for v in initial)
    timings["homogeneous_fit"] = time.perf_counter() - t0
    sigma0 = np.full(mesh.num_nodes, s0)
    sigma = sigma0.copy()
    z = np.full(M, z0)

    solver = CEMSolver(mesh, sigma, z)
    u, U = solver.solve(patterns)
    E = noise.residual(V, U.reshape(-1))
    state = ReconstructionState(0, sigma, z, U.reshape(-1), [E])
    clamp_counts, inner_flags, warnings, snapshots = [], [], [], []
    dirichlet = mesh.electrode_nodes
    terminated = "discrepancy" if E <= target else "max_outer"
    timings["outer"] = []

    while terminated != "discrepancy" and state.j < config.max_outer:
        t_step = time.perf_counter()
        J1, J2 = jacobian_from_solution(mesh, z, patterns, u, U)
        jac = JacobianPair(J1, J2, sigma, z, U.reshape(-1))
        system = build_linearized_system(jac, V, jac.U, sigma, z, sigma0, noise)

        sigma_lag = sigma
        counts, traces = [], []
        for _ in range(config.steps_per_linearization):
            H = assemble_H(mesh, sigma_lag, edge_fn, dirichlet)
            inner = priorconditioned_solve(system, H, eps, config.inner_max_iter)
            if not np.all(np.isfinite(inner.sigma)):
                raise ReconstructionError(f"non-finite conductivity at outer step {state.j}",
                                          state.snapshot())
            counts.append(inner.iterations)
            traces.append(inner.trace)
            inner_flags.append(inner.flag)
            if not inner.converged:
                warnings.append(f"outer step {state.j}: inner solver {inner.flag}")
            sigma_lag, _, _ = _safeguard(inner.sigma, np.ones(M), sigma0,
                                         config.sigma_floor_fraction)
        z_new = recover_contact_resistances(system, inner.sigma)
        sigma_new, z_new, clamps = _safeguard(inner.sigma, z_new, sigma0,
                                              config.sigma_floor_fraction)
        clamp_counts.append(clamps)
        if clamps["sigma"] or clamps["z"]:
            warnings.append(f"outer step {state.j}: positivity floor applied to "
                            f"{clamps['sigma']} conductivities and {clamps['z']} contact resistances")
        if not (np.all(np.isfinite(sigma_new)) and np.all(np.isfinite(z_new))):
            raise ReconstructionError(f"non-finite iterate at outer step {state.j}",
                                      state.snapshot())

        sigma, z = sigma_new, z_new
        solver = CEMSolver(mesh, sigma, z)
        u, U = solver.solve(patterns)
        E = noise.residual(V, U.reshape(-1))
        if not np.isfinite(E):
            raise ReconstructionError(f"non-finite residual at outer step {state.j}",
                                      state.snapshot())
        state.j += 1
        state.sigma, state.z, state.U = sigma, z, U.reshape(-1)
        state.E_history.append(E)
        state.inner_counts.append(int(sum(counts)))
        state.inner_traces.extend(traces)
        if keep_snapshots:
            snapshots.append(sigma.copy())
        timings["outer"].append(time.perf_counter() - t_step)
        log.info("outer %d: E = %.6g (target %.6g), inner iterations %s",
                 state.j, E, target, counts)
        if E <= target:
            terminated = "discrepancy"

    if terminated != "discrepancy":
        warnings.append(f"global discrepancy not reached after {state.j} outer steps")
    timings["total"] = time.perf_counter() - t0
    diagnostics = {
        "terminated": terminated,
        "outer_iterations": state.j,
        "epsilon": eps,
        "tau": config.tau,
        "target": target,
        "sigma0": s0,
        "z0": z0,
        "E_history": state.E_history,
        "inner_iterations": state.inner_counts,
        "inner_traces": state.inner_traces,
        "inner_flags": inner_flags,
        "clamp_counts": clamp_counts,
        "warnings": warnings,
        "config": {
            "edge": edge_fn.kind, "T": edge_fn.T, "tau": config.tau,
            "max_outer": config.max_outer, "inner_max_iter": config.inner_max_iter,
            "sigma_floor_fraction": config.sigma_floor_fraction,
            "steps_per_linearization": config.steps_per_linearization, "seed": config.seed,
        },
        "solver": {"quadrature": "exact", "forward": "sparse direct (SuperLU)",
                   "prior": "sparse direct (SuperLU)", "inner": "priorconditioned LSQR"},
        "z": z.tolist(),
    }
    return ReconstructionResult(sigma, z, diagnostics, state, timings, snapshots)
