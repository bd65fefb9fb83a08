"""Tetrahedral meshes with tagged electrode patches.

Provides the immutable :class:`TetMesh`, two structured generators used for
test geometries (a box and a circular cylinder), JSON mesh I/O and a legacy
VTK writer for meshes and nodal fields.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

from .serialize import dumps

__all__ = [
    "MeshError",
    "TetMesh",
    "ElectrodePatch",
    "generate_box_mesh",
    "generate_cylinder_mesh",
    "load_mesh",
    "save_mesh",
    "write_vtk",
]


class MeshError(ValueError):
    """Raised for invalid mesh data or generator arguments."""


class TetMesh:
    """Immutable tetrahedral mesh.

    Parameters
    ----------
    vertices : (N, 3) float array
    tets : (K, 4) int array, positively oriented
    boundary_tris : (B, 3) int array, outward oriented
    electrodes : sequence of M integer arrays of boundary-triangle indices
    validate : bool
        Run the full set of consistency checks (orientation, disjointness,
        connectivity).
    """

    def __init__(self, vertices, tets, boundary_tris, electrodes, validate=True):
        self.vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        self.tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
        self.boundary_tris = np.array(boundary_tris, dtype=np.int64).reshape(-1, 3)
        self.electrodes = tuple(np.array(e, dtype=np.int64).ravel() for e in electrodes)
        for arr in (self.vertices, self.tets, self.boundary_tris, *self.electrodes):
            arr.setflags(write=False)
        if validate:
            self._validate()

    # -- basic sizes -------------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_tets(self) -> int:
        return self.tets.shape[0]

    @property
    def num_electrodes(self) -> int:
        return len(self.electrodes)

    def __eq__(self, other):
        if not isinstance(other, TetMesh):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.tets, other.tets)
            and np.array_equal(self.boundary_tris, other.boundary_tris)
            and len(self.electrodes) == len(other.electrodes)
            and all(np.array_equal(a, b) for a, b in zip(self.electrodes, other.electrodes))
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"TetMesh(nodes={self.num_nodes}, tets={self.num_tets}, "
            f"boundary_tris={len(self.boundary_tris)}, electrodes={self.num_electrodes})"
        )

    def _validate(self):
        n = self.num_nodes
        if self.tets.size == 0:
            raise MeshError("mesh has no tetrahedra")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        bad = np.nonzero((self.tets < 0) | (self.tets >= n))
        if bad[0].size:
            k = int(bad[0][0])
            raise MeshError(f"tet {k} references vertex {int(self.tets[k, bad[1][0]])} "
                            f"outside [0, {n})")
        bad = np.nonzero((self.boundary_tris < 0) | (self.boundary_tris >= n))
        if bad[0].size:
            k = int(bad[0][0])
            raise MeshError(f"boundary triangle {k} references vertex "
                            f"{int(self.boundary_tris[k, bad[1][0]])} outside [0, {n})")
        vol = self.signed_volumes
        scale = np.ptp(self.vertices, axis=0).max() ** 3
        nonpos = np.nonzero(vol <= 1e-14 * scale)[0]
        if nonpos.size:
            k = int(nonpos[0])
            raise MeshError(f"tet {k} has non-positive signed volume {vol[k]:.3e}")
        nb = len(self.boundary_tris)
        owner = np.full(nb, -1)
        for m, tris in enumerate(self.electrodes):
            if tris.size == 0:
                raise MeshError(f"electrode {m} is empty")
            if np.any((tris < 0) | (tris >= nb)):
                raise MeshError(f"electrode {m} references a boundary triangle outside [0, {nb})")
            if len(np.unique(tris)) != len(tris):
                raise MeshError(f"electrode {m} lists a boundary triangle twice")
            clash = owner[tris] >= 0
            if np.any(clash):
                other = int(owner[tris][clash][0])
                raise MeshError(f"electrodes {other} and {m} share boundary triangle "
                                f"{int(tris[clash][0])}")
            owner[tris] = m
        ncomp, _ = connected_components(self.node_adjacency, directed=False)
        if ncomp != 1:
            raise MeshError(f"mesh is not connected ({ncomp} components)")

    # -- geometry ----------------------------------------------------------
    @cached_property
    def _edge_matrices(self):
        x = self.vertices[self.tets]
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        return np.linalg.det(self._edge_matrices) / 6.0

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Constant gradients of the four hat functions on each tet, shape (K, 4, 3)."""
        inv = np.linalg.inv(self._edge_matrices)
        g = np.empty((self.num_tets, 4, 3))
        g[:, 1:, :] = inv
        g[:, 0, :] = -inv.sum(axis=1)
        return g

    @cached_property
    def boundary_areas(self) -> np.ndarray:
        x = self.vertices[self.boundary_tris]
        return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        x = self.vertices[self.boundary_tris]
        n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def electrode_areas(self) -> np.ndarray:
        return np.array([self.boundary_areas[e].sum() for e in self.electrodes])

    @cached_property
    def electrode_nodes(self) -> np.ndarray:
        """Sorted indices of all nodes lying on some electrode patch."""
        if not self.electrodes:
            return np.zeros(0, dtype=np.int64)
        tris = np.concatenate(self.electrodes)
        return np.unique(self.boundary_tris[tris])

    @cached_property
    def node_adjacency(self) -> sp.csr_matrix:
        n = self.num_nodes
        pairs = np.array(list(itertools.combinations(range(4), 2)))
        rows = self.tets[:, pairs[:, 0]].ravel()
        cols = self.tets[:, pairs[:, 1]].ravel()
        data = np.ones(rows.size)
        a = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        return (a + a.T).tocsr()

    @cached_property
    def node_tet_incidence(self) -> sp.csr_matrix:
        """Sparse (N, K) matrix with ones where node belongs to tet."""
        k = np.repeat(np.arange(self.num_tets), 4)
        return sp.csr_matrix(
            (np.ones(k.size), (self.tets.ravel(), k)), shape=(self.num_nodes, self.num_tets)
        )

    def stiffness_matrix(self, weights=None) -> sp.csr_matrix:
        """Assemble sum_K w_K * int_K grad(phi_a) . grad(phi_b) dx."""
        g = self.basis_gradients
        ke = np.einsum("kad,kbd->kab", g, g) * self.volumes[:, None, None]
        if weights is not None:
            ke = ke * np.asarray(weights, dtype=float)[:, None, None]
        rows = np.repeat(self.tets, 4, axis=1).ravel()
        cols = np.tile(self.tets, (1, 4)).ravel()
        n = self.num_nodes
        return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    def mass_matrix(self) -> sp.csr_matrix:
        local = (np.ones((4, 4)) + np.eye(4)) / 20.0
        ke = self.volumes[:, None, None] * local
        rows = np.repeat(self.tets, 4, axis=1).ravel()
        cols = np.tile(self.tets, (1, 4)).ravel()
        n = self.num_nodes
        return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    def boundary_mass_matrix(self, tri_indices) -> sp.csr_matrix:
        """Exact P1 mass matrix over the listed boundary triangles."""
        tri_indices = np.asarray(tri_indices, dtype=np.int64)
        tris = self.boundary_tris[tri_indices]
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        ke = self.boundary_areas[tri_indices][:, None, None] * local
        rows = np.repeat(tris, 3, axis=1).ravel()
        cols = np.tile(tris, (1, 3)).ravel()
        n = self.num_nodes
        return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    def boundary_load_vector(self, tri_indices) -> np.ndarray:
        """Integrals of each hat function over the listed boundary triangles."""
        tri_indices = np.asarray(tri_indices, dtype=np.int64)
        out = np.zeros(self.num_nodes)
        np.add.at(out, self.boundary_tris[tri_indices].ravel(),
                  np.repeat(self.boundary_areas[tri_indices] / 3.0, 3))
        return out

    def element_gradients(self, nodal) -> np.ndarray:
        """Gradient of a P1 field on each tet. ``nodal`` may be (N,) or (P, N)."""
        nodal = np.asarray(nodal, dtype=float)
        g = self.basis_gradients
        if nodal.ndim == 1:
            return np.einsum("ka,kad->kd", nodal[self.tets], g)
        return np.einsum("pka,kad->kpd", nodal[:, self.tets], g)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.vertices, self.tets, self.boundary_tris):
            h.update(np.ascontiguousarray(arr).astype("<f8" if arr.dtype.kind == "f" else "<i8").tobytes())
        for e in self.electrodes:
            h.update(b"|")
            h.update(np.ascontiguousarray(e).astype("<i8").tobytes())
        return h.hexdigest()

    def locate(self, points, chunk=2048):
        """Return (tet index, barycentric coords) per point; index -1 when outside."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        x0 = self.vertices[self.tets[:, 0]]
        inv = np.linalg.inv(self._edge_matrices)
        lo = self.vertices[self.tets].min(axis=1)
        hi = self.vertices[self.tets].max(axis=1)
        tol = 1e-10
        idx = np.full(len(points), -1, dtype=np.int64)
        bary = np.zeros((len(points), 4))
        for start in range(0, len(points), chunk):
            p = points[start:start + chunk]
            for i, q in enumerate(p):
                cand = np.nonzero(np.all((q >= lo - tol) & (q <= hi + tol), axis=1))[0]
                if cand.size == 0:
                    continue
                xi = np.einsum("kij,kj->ki", inv[cand], q - x0[cand])
                lam = np.column_stack([1.0 - xi.sum(axis=1), xi])
                ok = np.nonzero(np.all(lam >= -tol, axis=1))[0]
                if ok.size:
                    idx[start + i] = cand[ok[0]]
                    bary[start + i] = lam[ok[0]]
        return idx, bary

    def interpolate(self, nodal, points):
        """Evaluate the P1 field at points; NaN outside the mesh."""
        idx, bary = self.locate(points)
        nodal = np.asarray(nodal, dtype=float)
        out = np.full(len(idx), np.nan)
        inside = idx >= 0
        out[inside] = np.einsum("pa,pa->p", nodal[self.tets[idx[inside]]], bary[inside])
        return out


# ---------------------------------------------------------------------------
# helpers shared by the generators
# ---------------------------------------------------------------------------
def _orient_tets(vertices, tets):
    x = vertices[tets]
    vol = np.linalg.det(np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2))
    tets = tets.copy()
    neg = vol < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def boundary_faces(vertices, tets):
    """Faces belonging to exactly one tet, oriented with outward normals."""
    faces = tets[:, _FACES].reshape(-1, 3)
    opposite = tets.reshape(-1)  # face i of a tet omits its vertex i
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    once = counts[inverse.ravel()] == 1
    faces = faces[once]
    opp = opposite[once]
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    n = np.cross(b - a, c - a)
    flip = np.einsum("ij,ij->i", n, vertices[opp] - a) > 0
    faces[flip, 1], faces[flip, 2] = faces[flip, 2].copy(), faces[flip, 1].copy()
    return faces


# ---------------------------------------------------------------------------
# box
# ---------------------------------------------------------------------------
_FACE_AXES = {"x-": (0, 0), "x+": (0, 1), "y-": (1, 0), "y+": (1, 1), "z-": (2, 0), "z+": (2, 1)}


@dataclass(frozen=True)
class ElectrodePatch:
    """Axis-aligned rectangle on one face of a box.

    ``lo`` and ``hi`` are the bounds in the two tangential coordinates, taken
    in increasing axis order (for ``"x-"`` these are (y, z)).
    """

    face: str
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        if self.face not in _FACE_AXES:
            raise MeshError(f"unknown box face {self.face!r}; expected one of {sorted(_FACE_AXES)}")
        if not (self.lo[0] < self.hi[0] and self.lo[1] < self.hi[1]):
            raise MeshError(f"degenerate electrode rectangle {self.lo} .. {self.hi}")

    @classmethod
    def full_face(cls, face: str, dimensions: Sequence[float]) -> "ElectrodePatch":
        axis = _FACE_AXES[face][0]
        t = [d for i, d in enumerate(dimensions) if i != axis]
        return cls(face, (0.0, 0.0), (float(t[0]), float(t[1])))


def _check_patch_overlap(patches: Sequence[ElectrodePatch]):
    for (i, p), (j, q) in itertools.combinations(enumerate(patches), 2):
        if p.face != q.face:
            continue
        if (min(p.hi[0], q.hi[0]) > max(p.lo[0], q.lo[0])
                and min(p.hi[1], q.hi[1]) > max(p.lo[1], q.lo[1])):
            raise MeshError(f"electrode patches {i} and {j} overlap on face {p.face}")


def generate_box_mesh(dimensions, resolution, electrode_layout: Iterable[ElectrodePatch]) -> TetMesh:
    """Structured mesh of ``[0,Lx] x [0,Ly] x [0,Lz]``.

    Every hex cell is split into six tets sharing the main diagonal, which
    gives a conforming mesh. Electrodes are the boundary triangles whose
    centroids fall inside the requested rectangles.
    """
    dims = np.asarray(dimensions, dtype=float)
    if dims.shape != (3,) or np.any(dims <= 0):
        raise MeshError("dimensions must be three positive lengths")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (3,))
    if np.any(res < 2):
        raise MeshError("resolution must be at least 2 cells per axis")
    patches = list(electrode_layout)
    _check_patch_overlap(patches)

    nx, ny, nz = (int(r) for r in res)
    axes = [np.linspace(0.0, d, r + 1) for d, r in zip(dims, res)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    ci, cj, ck = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
    tets = []
    for perm in itertools.permutations(range(3)):
        off = np.zeros(3, dtype=int)
        path = [off.copy()]
        for ax in perm:
            off[ax] += 1
            path.append(off.copy())
        tets.append(np.column_stack([vid(ci + o[0], cj + o[1], ck + o[2]) for o in path]))
    tets = _orient_tets(vertices, np.concatenate(tets))

    btris = boundary_faces(vertices, tets)
    centroids = vertices[btris].mean(axis=1)
    tol = 1e-9 * dims.max()
    electrodes = []
    for m, patch in enumerate(patches):
        axis, side = _FACE_AXES[patch.face]
        t = [a for a in range(3) if a != axis]
        on_face = np.abs(centroids[:, axis] - (dims[axis] if side else 0.0)) < tol
        inside = (
            on_face
            & (centroids[:, t[0]] >= patch.lo[0] - tol) & (centroids[:, t[0]] <= patch.hi[0] + tol)
            & (centroids[:, t[1]] >= patch.lo[1] - tol) & (centroids[:, t[1]] <= patch.hi[1] + tol)
        )
        sel = np.nonzero(inside)[0]
        if sel.size == 0:
            raise MeshError(f"electrode patch {m} contains no boundary triangle at this resolution")
        electrodes.append(sel)
    return TetMesh(vertices, tets, btris, electrodes)


# ---------------------------------------------------------------------------
# cylinder
# ---------------------------------------------------------------------------
def _disc_points(radius, n_theta, n_radial):
    pts = [np.zeros((1, 2))]
    for k in range(1, n_radial + 1):
        n_k = n_theta if k == n_radial else max(6, int(round(n_theta * k / n_radial)))
        # stagger alternate rings to avoid co-circular quads
        shift = 0.0 if (n_radial - k) % 2 == 0 else 0.5
        ang = 2.0 * np.pi * (np.arange(n_k) + shift) / n_k
        r = radius * k / n_radial
        pts.append(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
    return np.concatenate(pts)


def generate_cylinder_mesh(radius, height, resolution, M, electrode_size, rings=1,
                           ring_heights=None, angle_offset=0.0) -> TetMesh:
    """Mesh of the cylinder ``D(0, radius) x (0, height)`` with lateral electrodes.

    Parameters
    ----------
    resolution : (n_theta, n_radial, n_z)
        Boundary segments around the circumference, radial rings and axial
        layers. A single int ``n`` means ``(8n, n, n)``.
    M : int
        Total number of electrodes, split evenly over ``rings``.
    electrode_size : (width, height)
        Arc width and axial height of each electrode patch.
    ring_heights : optional sequence of ring centre heights; defaults to
        equally spaced rings.
    angle_offset : angular shift of the first electrode, in radians. Odd
        rings are additionally shifted by half an electrode spacing.
    """
    if M < 2:
        raise MeshError("the electrode model needs at least M = 2 electrodes")
    if radius <= 0 or height <= 0:
        raise MeshError("radius and height must be positive")
    if np.ndim(resolution) == 0:
        n = int(resolution)
        resolution = (8 * n, n, n)
    n_theta, n_radial, n_z = (int(v) for v in resolution)
    if n_theta < 8 or n_radial < 1 or n_z < 2:
        raise MeshError("resolution must give n_theta >= 8, n_radial >= 1, n_z >= 2")
    if M % rings:
        raise MeshError(f"M = {M} electrodes cannot be split evenly over {rings} rings")
    per_ring = M // rings
    width, eheight = (float(v) for v in electrode_size)
    spacing = 2.0 * np.pi / per_ring
    if width / radius >= spacing:
        raise MeshError("electrode width exceeds the angular spacing; patches would overlap")
    if ring_heights is None:
        ring_heights = [height * (r + 0.5) / rings for r in range(rings)]
    ring_heights = [float(h) for h in ring_heights]
    if len(ring_heights) != rings:
        raise MeshError("ring_heights must list one height per ring")
    for (i, a), (j, b) in itertools.combinations(enumerate(ring_heights), 2):
        if abs(a - b) < eheight:
            raise MeshError(f"electrode rings {i} and {j} overlap")

    pts2 = _disc_points(radius, n_theta, n_radial)
    tri2 = Delaunay(pts2).simplices
    a2 = pts2[tri2]
    e1, e2 = a2[:, 1] - a2[:, 0], a2[:, 2] - a2[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    tri2 = tri2[area > 1e-12 * radius**2]
    n2 = len(pts2)

    zs = np.linspace(0.0, height, n_z + 1)
    vertices = np.column_stack([
        np.tile(pts2[:, 0], n_z + 1), np.tile(pts2[:, 1], n_z + 1), np.repeat(zs, n2)
    ])

    # Splitting each prism by sorted vertex index makes every quad diagonal
    # depend only on its own edge, so neighbouring prisms conform.
    tri2 = np.sort(tri2, axis=1)
    tets = []
    for layer in range(n_z):
        lo = tri2 + layer * n2
        hi = lo + n2
        a0, b0, c0 = lo.T
        a1, b1, c1 = hi.T
        tets.append(np.column_stack([a0, b0, c0, c1]))
        tets.append(np.column_stack([a0, b0, b1, c1]))
        tets.append(np.column_stack([a0, a1, b1, c1]))
    tets = _orient_tets(vertices, np.concatenate(tets))

    btris = boundary_faces(vertices, tets)
    cen = vertices[btris].mean(axis=1)
    normal_z = np.cross(vertices[btris[:, 1]] - vertices[btris[:, 0]],
                        vertices[btris[:, 2]] - vertices[btris[:, 0]])[:, 2]
    lateral = np.abs(normal_z) < 1e-12 * radius * height
    theta = np.arctan2(cen[:, 1], cen[:, 0])
    half_w = 0.5 * width / radius
    electrodes = []
    for r, zc in enumerate(ring_heights):
        shift = angle_offset + (0.5 * spacing if r % 2 else 0.0)
        for e in range(per_ring):
            centre = shift + e * spacing
            dtheta = np.angle(np.exp(1j * (theta - centre)))
            sel = np.nonzero(lateral & (np.abs(dtheta) <= half_w + 1e-9)
                             & (np.abs(cen[:, 2] - zc) <= 0.5 * eheight + 1e-9))[0]
            if sel.size == 0:
                raise MeshError(f"electrode {len(electrodes)} contains no boundary triangle; "
                                "refine the mesh or enlarge the electrodes")
            electrodes.append(sel)
    return TetMesh(vertices, tets, btris, electrodes)


def polygon_prism_volume(radius, height, n_theta):
    """Exact volume of the prism over the inscribed regular n_theta-gon."""
    return 0.5 * n_theta * radius**2 * np.sin(2.0 * np.pi / n_theta) * height


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------
def mesh_to_dict(mesh: TetMesh) -> dict:
    return {
        "vertices": mesh.vertices.tolist(),
        "tets": mesh.tets.tolist(),
        "boundary_tris": mesh.boundary_tris.tolist(),
        "electrodes": [e.tolist() for e in mesh.electrodes],
    }


def save_mesh(mesh: TetMesh, path) -> None:
    Path(path).write_text(dumps(mesh_to_dict(mesh)))


def load_mesh(path) -> TetMesh:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MeshError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}") from exc
    if not isinstance(data, dict):
        raise MeshError(f"{path}: top level must be an object")
    missing = {"vertices", "tets", "boundary_tris", "electrodes"} - set(data)
    if missing:
        raise MeshError(f"{path}: missing keys {sorted(missing)}")
    try:
        vertices = np.asarray(data["vertices"], dtype=np.float64)
        tets = np.asarray(data["tets"], dtype=np.int64)
        btris = np.asarray(data["boundary_tris"], dtype=np.int64)
        electrodes = [np.asarray(e, dtype=np.int64) for e in data["electrodes"]]
    except (TypeError, ValueError) as exc:
        raise MeshError(f"{path}: malformed array data ({exc})") from exc
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshError(f"{path}: 'vertices' must be a list of [x, y, z]")
    if tets.ndim != 2 or tets.shape[1] != 4:
        raise MeshError(f"{path}: 'tets' must be a list of 4 vertex indices")
    if btris.ndim != 2 or btris.shape[1] != 3:
        raise MeshError(f"{path}: 'boundary_tris' must be a list of 3 vertex indices")
    try:
        return TetMesh(vertices, tets, btris, electrodes)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc


def write_vtk(path, mesh: TetMesh, point_data: dict | None = None, title="eit3d") -> None:
    """Legacy ASCII VTK unstructured grid (cell type 10) with nodal scalars."""
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.num_nodes} double"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    k = mesh.num_tets
    lines.append(f"CELLS {k} {5 * k}")
    lines += [f"4 {a} {b} {c} {d}" for a, b, c, d in mesh.tets]
    lines.append(f"CELL_TYPES {k}")
    lines += ["10"] * k
    if point_data:
        lines.append(f"POINT_DATA {mesh.num_nodes}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (mesh.num_nodes,):
                raise ValueError(f"field {name!r} must have one value per node")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in values]
    Path(path).write_text("\n".join(lines) + "\n")
