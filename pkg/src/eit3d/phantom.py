"""Piecewise-constant phantoms and simulated electrode measurements."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fem import CEMSolver, standard_patterns
from .linsolve import NoiseModel
from .mesh import TetMesh

__all__ = [
    "Ball",
    "Cylinder",
    "Box",
    "Inclusion",
    "Phantom",
    "SimulatedData",
    "rasterize_phantom",
    "draw_contact_resistances",
    "standard_patterns",
    "noise_covariance_relative",
    "noise_covariance_range",
    "simulate_measurements",
    "add_noise",
    "simulate_dataset",
    "phantom_from_dict",
    "phantom_to_dict",
    "case1_phantom",
]


@dataclass(frozen=True)
class Ball:
    center: tuple[float, float, float]
    radius: float

    def contains(self, x):
        return np.linalg.norm(x - np.asarray(self.center), axis=1) <= self.radius


@dataclass(frozen=True)
class Cylinder:
    """Cylinder with axis parallel to z, from ``base[2]`` to ``base[2] + height``."""

    base: tuple[float, float, float]
    radius: float
    height: float

    def contains(self, x):
        b = np.asarray(self.base)
        r = np.hypot(x[:, 0] - b[0], x[:, 1] - b[1])
        return (r <= self.radius) & (x[:, 2] >= b[2]) & (x[:, 2] <= b[2] + self.height)


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, x):
        return np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=1)


@dataclass(frozen=True)
class Inclusion:
    shape: Ball | Cylinder | Box
    conductivity: float


@dataclass(frozen=True)
class Phantom:
    """Background plus inclusions; later inclusions take precedence."""

    background: float = 1.0
    inclusions: Sequence[Inclusion] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.background > 0:
            raise ValueError("background conductivity must be positive")
        for k, inc in enumerate(self.inclusions):
            if not inc.conductivity > 0:
                raise ValueError(f"inclusion {k} has non-positive conductivity")
        object.__setattr__(self, "inclusions", tuple(self.inclusions))


def rasterize_phantom(mesh: TetMesh, phantom: Phantom) -> np.ndarray:
    """Nodal conductivity: value of the last inclusion containing each node."""
    sigma = np.full(mesh.num_nodes, float(phantom.background))
    for inc in phantom.inclusions:
        sigma[inc.shape.contains(mesh.vertices)] = inc.conductivity
    return sigma


def case1_phantom() -> Phantom:
    """Unit cylinder with a resistive standing and a conductive hanging inclusion."""
    return Phantom(1.0, (
        Inclusion(Cylinder((0.45, 0.0, 0.0), 0.4, 0.6), 0.5),
        Inclusion(Cylinder((-0.5, 0.0, 0.4), 0.3, 0.6), 2.0),
    ))


_SHAPES = {"ball": Ball, "cylinder": Cylinder, "box": Box}


def phantom_to_dict(phantom: Phantom) -> dict:
    out = []
    for inc in phantom.inclusions:
        kind = {Ball: "ball", Cylinder: "cylinder", Box: "box"}[type(inc.shape)]
        entry = {"shape": kind, "conductivity": inc.conductivity}
        entry.update({k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in inc.shape.__dict__.items()})
        out.append(entry)
    return {"background": phantom.background, "inclusions": out}


def phantom_from_dict(data: dict) -> Phantom:
    unknown = set(data) - {"background", "inclusions"}
    if unknown:
        raise ValueError(f"unknown phantom keys {sorted(unknown)}")
    inclusions = []
    for k, entry in enumerate(data.get("inclusions", [])):
        entry = dict(entry)
        try:
            cls = _SHAPES[entry.pop("shape")]
            cond = float(entry.pop("conductivity"))
        except KeyError as exc:
            raise ValueError(f"inclusion {k}: missing or unknown {exc}") from exc
        try:
            shape = cls(**{key: tuple(v) if isinstance(v, list) else float(v)
                           for key, v in entry.items()})
        except TypeError as exc:
            raise ValueError(f"inclusion {k}: {exc}") from exc
        inclusions.append(Inclusion(shape, cond))
    return Phantom(float(data.get("background", 1.0)), tuple(inclusions))


def draw_contact_resistances(z_mean: float, std: float, M: int, seed=None) -> np.ndarray:
    """``z_m = z_mean + v_m`` with Gaussian ``v_m``; non-positive draws are redrawn."""
    if not z_mean > 0:
        raise ValueError("mean contact resistance must be positive")
    if std < 0:
        raise ValueError("standard deviation must be non-negative")
    rng = np.random.default_rng(seed)
    z = z_mean + std * rng.standard_normal(M)
    bad = z <= 0
    while np.any(bad):
        z[bad] = z_mean + std * rng.standard_normal(int(bad.sum()))
        bad = z <= 0
    return z


def noise_covariance_relative(U_exact, gamma: float) -> NoiseModel:
    """Homogeneous diagonal covariance, std = gamma * mean |U_exact|."""
    U_exact = np.asarray(U_exact, dtype=float)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    level = np.mean(np.abs(U_exact))
    if level == 0:
        raise ValueError("exact measurements are all zero; relative noise level undefined")
    return NoiseModel(np.full(U_exact.size, (gamma * level) ** 2))


def noise_covariance_range(V, gamma: float) -> NoiseModel:
    """Homogeneous diagonal covariance, std = gamma * (max V - min V)."""
    V = np.asarray(V, dtype=float)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    spread = V.max() - V.min()
    if spread == 0:
        raise ValueError("measurements have zero range; noise level undefined")
    return NoiseModel(np.full(V.size, (gamma * spread) ** 2))


@dataclass
class SimulatedData:
    V: np.ndarray
    noise: NoiseModel | None
    U_exact: np.ndarray
    sigma_true: np.ndarray
    z_true: np.ndarray
    gamma: float
    seed: int | None


def simulate_measurements(fine_mesh: TetMesh, phantom: Phantom, z, patterns=None,
                          gamma: float = 4e-3, seed=None) -> SimulatedData:
    """Noisy data ``V = U(sigma, z) + eta`` with the relative covariance model.

    ``gamma = 0`` returns the exact data and no noise model.
    """
    M = fine_mesh.num_electrodes
    if patterns is None:
        patterns = standard_patterns(M)
    sigma = rasterize_phantom(fine_mesh, phantom)
    _, U = CEMSolver(fine_mesh, sigma, z).solve(patterns)
    U_exact = U.reshape(-1)
    if gamma == 0:
        return SimulatedData(U_exact.copy(), None, U_exact, sigma,
                             np.asarray(z, dtype=float), 0.0, seed)
    V, noise = add_noise(U_exact, gamma, seed)
    return SimulatedData(V, noise, U_exact, sigma, np.asarray(z, dtype=float), float(gamma), seed)


def add_noise(U_exact, gamma: float, seed=None):
    """``(V, noise)`` with ``V = U_exact + eta`` and ``eta ~ N(0, Gamma)`` from the relative model."""
    U_exact = np.asarray(U_exact, dtype=float)
    noise = noise_covariance_relative(U_exact, gamma)
    rng = np.random.default_rng(seed)
    return U_exact + np.sqrt(noise.variance) * rng.standard_normal(U_exact.size), noise


def simulate_dataset(fine_mesh: TetMesh, phantom: Phantom, seed: int = 0, gamma: float = 4e-3,
                     z_mean: float = 2e-3, z_std: float = 5e-4) -> SimulatedData:
    """Draw contact resistances and noise from two streams spawned from ``seed``."""
    z_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    z = draw_contact_resistances(z_mean, z_std, fine_mesh.num_electrodes, seed=z_seq)
    sim = simulate_measurements(fine_mesh, phantom, z, gamma=gamma, seed=noise_seq)
    sim.seed = seed
    return sim
