"""Desk-scale Case-1 geometry shared by the CLI and the acceptance suite.

Unit cylinder with two rings of eight electrodes. The inversion mesh has
2475 nodes; the simulation mesh is about three times finer and has a
different hash, so the pair never commits an inverse crime.
"""
from __future__ import annotations

from .mesh import TetMesh, generate_cylinder_mesh

__all__ = ["DESK_ELECTRODES", "DESK_ELECTRODE_SIZE", "DESK_RESOLUTION", "desk_cylinder"]

DESK_ELECTRODES = 16
DESK_ELECTRODE_SIZE = (0.35, 0.2)
DESK_RESOLUTION = {
    "inverse": (64, 6, 10),
    "fine": (64, 10, 20),
}


def desk_cylinder(kind: str = "inverse") -> TetMesh:
    """Desk-scale cylinder mesh, ``kind`` is ``"inverse"`` or ``"fine"``."""
    try:
        resolution = DESK_RESOLUTION[kind]
    except KeyError:
        raise ValueError(f"unknown preset {kind!r}; use one of {sorted(DESK_RESOLUTION)}") from None
    return generate_cylinder_mesh(1.0, 1.0, resolution, DESK_ELECTRODES, DESK_ELECTRODE_SIZE,
                                  rings=2)
