"""Conforming tetrahedral meshes of block domains by barycentric refinement.

A domain is a face-connected union of axis-aligned cubes ("blocks") scaled
by a common edge length.  Meshing proceeds in three steps: every block is
split into N^3 sub-cubes, every sub-cube into 5 tetrahedra (checkerboard
mirrored so neighbouring sub-cubes share face diagonals), and every
tetrahedron into 4 children by connecting its barycenter to its faces.
The last step is Zhang's macro-element construction, which makes the
Scott-Vogelius velocity/pressure pair stable for degree >= 3.

All vertices are integer multiples of ``scale / (4 N)``; deduplication
uses those exact integer lattice keys, never floating tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    """Invalid domain specification or mesh construction request."""


# corners of the unit cube, indexed 0..7
_CUBE_CORNERS = np.array(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64
)


@dataclass(frozen=True)
class DomainSpec:
    """Union of unit blocks at integer lattice positions, scaled by ``scale``."""

    blocks: tuple
    scale: float = 1.0

    def __post_init__(self):
        blocks = tuple(tuple(int(c) for c in b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not blocks:
            raise MeshError("block set is empty")
        if len(set(blocks)) != len(blocks):
            raise MeshError("duplicate block coordinates")
        if any(len(b) != 3 for b in blocks):
            raise MeshError("blocks must be integer 3-tuples")
        if not self.scale > 0:
            raise MeshError("scale must be positive")
        if not _face_connected(blocks):
            raise MeshError("block set is not face-connected")

    @property
    def volume(self) -> float:
        return len(self.blocks) * self.scale**3


def _face_connected(blocks) -> bool:
    bset = set(blocks)
    seen = {blocks[0]}
    stack = [blocks[0]]
    while stack:
        x, y, z = stack.pop()
        for nb in ((x + 1, y, z), (x - 1, y, z), (x, y + 1, z),
                   (x, y - 1, z), (x, y, z + 1), (x, y, z - 1)):
            if nb in bset and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(bset)


@dataclass
class FaceData:
    """Unique-face connectivity of a tet mesh."""

    faces: np.ndarray        # (nf, 3) sorted global vertex ids
    elem_faces: np.ndarray   # (nt, 4) face id of each local face
    face_elems: np.ndarray   # (nf, 2) incident tets, -1 when boundary
    is_boundary: np.ndarray  # (nf,) bool


@dataclass
class Mesh:
    """Tetrahedral mesh with exact integer vertex lattice.

    ``lattice`` holds vertex coordinates as integers in units of
    ``lattice_unit`` (= scale / (4N) for generated meshes); ``vertices``
    is the floating-point image.  ``macro_map[t] = (parent tet, sub-cube)``
    records the barycentric-refinement provenance of tet ``t``.
    """

    vertices: np.ndarray
    tets: np.ndarray
    h: float
    lattice: np.ndarray
    lattice_unit: float
    macro_map: np.ndarray
    boundary_faces: np.ndarray
    domain_volume: float | None = None
    n_subcubes: int | None = None

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_tets(self) -> int:
        return len(self.tets)

    @cached_property
    def tet_volumes(self) -> np.ndarray:
        v = self.vertices[self.tets]
        return np.linalg.det(v[:, 1:] - v[:, :1]) / 6.0

    @cached_property
    def max_diameter(self) -> float:
        """Largest element diameter (longest edge over all tets)."""
        v = self.vertices[self.tets]
        pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        longest = 0.0
        for a, b in pairs:
            longest = max(longest, float(np.linalg.norm(v[:, a] - v[:, b],
                                                        axis=1).max()))
        return longest

    @cached_property
    def face_data(self) -> FaceData:
        local = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
        all_faces = np.sort(self.tets[:, local], axis=2).reshape(-1, 3)
        faces, inv, counts = np.unique(all_faces, axis=0, return_inverse=True,
                                       return_counts=True)
        elem_faces = inv.reshape(-1, 4)
        face_elems = -np.ones((len(faces), 2), dtype=np.int64)
        for t in range(len(self.tets)):
            for lf in range(4):
                f = elem_faces[t, lf]
                face_elems[f, 1 if face_elems[f, 0] >= 0 else 0] = t
        return FaceData(faces=faces, elem_faces=elem_faces,
                        face_elems=face_elems, is_boundary=counts == 1)


@dataclass
class MeshStats:
    num_tets: int
    num_vertices: int
    h: float
    min_volume: float
    max_volume: float


@dataclass
class ValidationReport:
    """Diagnostics from :func:`validate_mesh`; all lists empty on success."""

    orientation_violations: list = field(default_factory=list)
    nonconforming_faces: list = field(default_factory=list)
    volume_mismatch: float | None = None
    boundary_closure_violations: list = field(default_factory=list)
    barycentric_violations: list = field(default_factory=list)
    count_mismatch: str | None = None

    @property
    def ok(self) -> bool:
        return (not self.orientation_violations
                and not self.nonconforming_faces
                and self.volume_mismatch is None
                and not self.boundary_closure_violations
                and not self.barycentric_violations
                and self.count_mismatch is None)

    def summary(self) -> str:
        if self.ok:
            return "mesh valid"
        parts = []
        if self.orientation_violations:
            parts.append(f"{len(self.orientation_violations)} orientation violations")
        if self.nonconforming_faces:
            parts.append(f"{len(self.nonconforming_faces)} nonconforming faces")
        if self.volume_mismatch is not None:
            parts.append(f"volume mismatch {self.volume_mismatch:.3e}")
        if self.boundary_closure_violations:
            parts.append(f"{len(self.boundary_closure_violations)} open boundary edges")
        if self.barycentric_violations:
            parts.append(f"{len(self.barycentric_violations)} barycentric-split violations")
        if self.count_mismatch:
            parts.append(self.count_mismatch)
        return "; ".join(parts)


def _five_split(parity: int) -> list:
    """5-tet decomposition of the unit cube: one core tet on the corners of
    matching parity plus four corner tets.  ``parity`` mirrors the split so
    that face diagonals of neighbouring sub-cubes coincide."""
    corners = [tuple(c) for c in _CUBE_CORNERS]
    core = [c for c in corners if sum(c) % 2 == parity % 2]
    tets = [core]
    for apex in corners:
        if sum(apex) % 2 == parity % 2:
            continue
        nbrs = [c for c in core
                if sum(abs(a - b) for a, b in zip(apex, c)) == 1]
        tets.append([apex] + nbrs)
    out = []
    for t in tets:
        v = np.array(t, dtype=np.int64)
        if np.linalg.det((v[1:] - v[:1]).astype(float)) < 0:
            v[[2, 3]] = v[[3, 2]]
        out.append(v)
    return out


def generate_mesh(spec: DomainSpec, N: int) -> Mesh:
    """Mesh ``spec`` with N^3 sub-cubes per block; every sub-cube yields
    20 tets (5-split followed by the 4-way barycentric split)."""
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise MeshError(f"subdivision count N must be a positive integer, got {N!r}")
    h = spec.scale / N

    splits = [_five_split(p) for p in (0, 1)]
    vertex_ids: dict = {}
    lattice_rows: list = []

    def vid(key) -> int:
        i = vertex_ids.get(key)
        if i is None:
            i = len(lattice_rows)
            vertex_ids[key] = i
            lattice_rows.append(key)
        return i

    tets = []
    macro = []
    parent_index = 0
    cube_index = 0
    for bx, by, bz in spec.blocks:
        for ix in range(N):
            for iy in range(N):
                for iz in range(N):
                    cx, cy, cz = bx * N + ix, by * N + iy, bz * N + iz
                    origin = np.array([cx, cy, cz], dtype=np.int64) * 4
                    for tet in splits[(cx + cy + cz) % 2]:
                        corners = origin + 4 * tet  # lattice units of h/4
                        bary = corners.sum(axis=0) // 4
                        ids = [vid(tuple(c)) for c in corners]
                        bid = vid(tuple(bary))
                        for drop in range(4):
                            child = list(ids)
                            child[drop] = bid
                            tets.append(child)
                            macro.append((parent_index, cube_index))
                        parent_index += 1
                    cube_index += 1

    lattice = np.array(lattice_rows, dtype=np.int64)
    unit = h / 4.0
    vertices = lattice * unit
    tets = np.array(tets, dtype=np.int64)
    mesh = Mesh(vertices=vertices, tets=tets, h=h, lattice=lattice,
                lattice_unit=unit, macro_map=np.array(macro, dtype=np.int64),
                boundary_faces=np.empty((0, 2), dtype=np.int64),
                domain_volume=spec.volume, n_subcubes=cube_index)
    fd = mesh.face_data
    bnd = []
    for f in np.nonzero(fd.is_boundary)[0]:
        t = fd.face_elems[f, 0]
        lf = int(np.nonzero(fd.elem_faces[t] == f)[0][0])
        bnd.append((t, lf))
    mesh.boundary_faces = np.array(bnd, dtype=np.int64)
    return mesh


def mesh_from_arrays(lattice: np.ndarray, unit: float, tets: np.ndarray,
                     domain_volume: float | None = None) -> Mesh:
    """Build a Mesh directly from integer lattice vertices and connectivity.

    Intended for tests and small hand-made meshes; boundary faces are the
    faces owned by a single tet.
    """
    lattice = np.asarray(lattice, dtype=np.int64)
    tets = np.asarray(tets, dtype=np.int64)
    mesh = Mesh(vertices=lattice * unit, tets=tets, h=float("nan"),
                lattice=lattice, lattice_unit=unit,
                macro_map=np.empty((0, 2), dtype=np.int64),
                boundary_faces=np.empty((0, 2), dtype=np.int64),
                domain_volume=domain_volume, n_subcubes=None)
    fd = mesh.face_data
    bnd = []
    for f in np.nonzero(fd.is_boundary)[0]:
        t = fd.face_elems[f, 0]
        lf = int(np.nonzero(fd.elem_faces[t] == f)[0][0])
        bnd.append((t, lf))
    mesh.boundary_faces = np.array(bnd, dtype=np.int64).reshape(-1, 2)
    return mesh


def validate_mesh(mesh: Mesh) -> ValidationReport:
    """Diagnostic sweep: orientation, conformity, volume, boundary closure
    and the 4-way barycentric split.  Never raises."""
    report = ValidationReport()

    vols = mesh.tet_volumes
    report.orientation_violations = [int(t) for t in np.nonzero(vols <= 0)[0]]

    fd = mesh.face_data
    registered = set()
    for t, lf in mesh.boundary_faces:
        registered.add(int(fd.elem_faces[t, lf]))
    for f in np.nonzero(fd.is_boundary)[0]:
        if int(f) not in registered:
            report.nonconforming_faces.append(tuple(int(v) for v in fd.faces[f]))

    if mesh.domain_volume is not None:
        total = float(np.abs(vols).sum())
        rel = abs(total - mesh.domain_volume) / mesh.domain_volume
        if rel > 1e-12:
            report.volume_mismatch = rel

    if mesh.n_subcubes is not None and mesh.num_tets != 20 * mesh.n_subcubes:
        report.count_mismatch = (
            f"expected {20 * mesh.n_subcubes} tets, found {mesh.num_tets}")

    # boundary surface closure: every edge of the boundary faces twice
    edge_counts: dict = {}
    for t, lf in mesh.boundary_faces:
        tri = fd.faces[fd.elem_faces[t, lf]]
        for a, b in ((0, 1), (0, 2), (1, 2)):
            key = (int(tri[a]), int(tri[b]))
            edge_counts[key] = edge_counts.get(key, 0) + 1
    report.boundary_closure_violations = [e for e, c in edge_counts.items() if c != 2]

    # barycentric split: each child volume equals a quarter of its parent
    if mesh.num_tets and len(mesh.macro_map) == mesh.num_tets:
        parents = mesh.macro_map[:, 0]
        nparents = parents.max() + 1
        psum = np.zeros(nparents)
        np.add.at(psum, parents, np.abs(vols))
        bad = np.abs(np.abs(vols) - psum[parents] / 4.0) > 1e-12 * psum[parents]
        report.barycentric_violations = [int(t) for t in np.nonzero(bad)[0]]

    return report


def mesh_statistics(mesh: Mesh) -> MeshStats:
    vols = mesh.tet_volumes
    return MeshStats(num_tets=mesh.num_tets, num_vertices=mesh.num_vertices,
                     h=mesh.h, min_volume=float(vols.min()),
                     max_volume=float(vols.max()))


# ---------------------------------------------------------------------------
# built-in domains; N in the tables counts sub-cubes along the z direction,
# so it is divided by the block extent in z before per-block refinement.

BUILTIN_DOMAINS = {
    "cube": (((0, 0, 0),), 1),
    "lshape": (((0, 0, 0), (-1, 0, 0), (0, -1, 0)), 1),
    "cubeminuscube": (tuple((i, j, k) for i in (0, 1) for j in (0, 1)
                            for k in (0, 1) if (i, j, k) != (1, 1, 1)), 2),
}


def builtin_domain(name: str) -> DomainSpec:
    try:
        blocks, _ = BUILTIN_DOMAINS[name]
    except KeyError:
        raise MeshError(f"unknown domain {name!r}; choices: {sorted(BUILTIN_DOMAINS)}")
    return DomainSpec(blocks=blocks, scale=1.0)


def domain_refinement(name: str, N: int) -> int:
    """Translate a table-style N (sub-cubes along z) to per-block refinement."""
    _, z_extent = BUILTIN_DOMAINS[name]
    if N % z_extent:
        raise MeshError(f"domain {name!r} requires N divisible by {z_extent}")
    return N // z_extent


def export_vtk(mesh: Mesh, path) -> None:
    """Legacy ASCII VTK unstructured grid (cell type 10)."""
    lines = ["# vtk DataFile Version 3.0", "stokesbound mesh", "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.num_vertices} double"]
    lines += [" ".join(f"{c:.17g}" for c in v) for v in mesh.vertices]
    lines.append(f"CELLS {mesh.num_tets} {5 * mesh.num_tets}")
    lines += ["4 " + " ".join(str(i) for i in t) for t in mesh.tets]
    lines.append(f"CELL_TYPES {mesh.num_tets}")
    lines += ["10"] * mesh.num_tets
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def export_json(mesh: Mesh, path) -> None:
    import json

    payload = {"schema": 1,
               "vertices": mesh.vertices.tolist(),
               "tets": mesh.tets.tolist(),
               "h": mesh.h}
    with open(path, "w") as fh:
        json.dump(payload, fh)
