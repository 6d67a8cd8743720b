"""Periodic cell complexes: cubical 3-tori and triangulated 2-tori.

Every p-face is stored as a tuple of vertex *images*: a vertex id together
with an integer lattice shift, so that a face which wraps around the torus
keeps its true geometry. Faces are normalized by sorting their images by
(id, shift) and translating the first image to shift zero; the sorted order
is the face orientation for simplices (ascending global vertex id).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay

__all__ = [
    "PeriodicMesh",
    "SignedIncidence",
    "MeshError",
    "generate_cubical_lattice",
    "generate_periodic_triangulation",
    "mesh_diameter",
    "boundary_incidence",
    "periodic_distance",
    "min_angle_degrees",
]

# local edge order of a triangle; the boundary signs below follow from it
TRIANGLE_EDGES = ((0, 1), (1, 2), (0, 2))
TRIANGLE_EDGE_SIGNS = (1, 1, -1)


class MeshError(ValueError):
    """Invalid mesh parameters or a mesh that could not be generated."""


@dataclass(frozen=True, eq=False)
class PeriodicMesh:
    """Oriented periodic cell complex.

    ``faces[p]`` holds vertex ids, shape ``(n_p, k_p)``; ``shifts[p]`` holds
    the lattice shift of each of those vertex images, shape ``(n_p, k_p, dim)``.
    ``cell_entities[p]`` maps every top cell to the ids of its local p-faces,
    in the local order used by the reference elements.
    """

    dimension: int
    periods: tuple[float, ...]
    vertices: np.ndarray
    faces: dict[int, np.ndarray]
    shifts: dict[int, np.ndarray]
    cell_kind: str
    cell_entities: dict[int, np.ndarray]
    lattice_spacings: tuple[float, ...] | None = None
    lattice_shape: tuple[int, ...] | None = None
    _incidence: dict = field(default_factory=dict, repr=False)

    def n_faces(self, p: int) -> int:
        return len(self.faces[p])

    @property
    def n_cells(self) -> int:
        return self.n_faces(self.dimension)

    def euler_characteristic(self) -> int:
        return sum((-1) ** p * self.n_faces(p) for p in range(self.dimension + 1))

    def cell_coordinates(self) -> np.ndarray:
        """Unwrapped vertex coordinates of every top cell, ``(n_cells, k, dim)``."""
        d = self.dimension
        ids = self.faces[d]
        return self.vertices[ids] + self.shifts[d] * np.asarray(self.periods)

    def face_coordinates(self, p: int) -> np.ndarray:
        return self.vertices[self.faces[p]] + self.shifts[p] * np.asarray(self.periods)

    def face_measures(self, p: int) -> np.ndarray:
        """p-volume of every p-face (1 for vertices)."""
        n = self.n_faces(p)
        if p == 0:
            return np.ones(n)
        if self.cell_kind == "cube":
            # faces of axis a are stored in block a; a p-face spans the axes
            # listed by _cube_face_axes
            out = np.empty(n)
            nc = n // (1 if p in (0, 3) else 3)
            for a in range(1 if p == 3 else 3):
                axes = _cube_face_axes(p, a)
                out[a * nc:(a + 1) * nc] = math.prod(self.lattice_spacings[b] for b in axes)
            return out
        x = self.face_coordinates(p)
        if p == 1:
            return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
        e1, e2 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def to_json(self) -> str:
        doc = {
            "dimension": self.dimension,
            "periods": list(self.periods),
            "cell_kind": self.cell_kind,
            "vertices": self.vertices.tolist(),
            "faces": {str(p): self.faces[p].tolist() for p in range(1, self.dimension + 1)},
            "shifts": {str(p): self.shifts[p].tolist() for p in range(1, self.dimension + 1)},
        }
        if self.lattice_spacings is not None:
            doc["lattice_spacings"] = list(self.lattice_spacings)
            doc["lattice_shape"] = list(self.lattice_shape)
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "PeriodicMesh":
        doc = json.loads(text)
        if doc.get("cell_kind") == "cube":
            shape = doc["lattice_shape"]
            return generate_cubical_lattice(*shape, *doc["lattice_spacings"])
        dim = doc["dimension"]
        vertices = np.asarray(doc["vertices"], dtype=float)
        tris = np.asarray(doc["faces"][str(dim)], dtype=np.int64)
        tshift = np.asarray(doc["shifts"][str(dim)], dtype=np.int64)
        return _triangle_complex(vertices, tuple(doc["periods"]), tris, tshift)


@dataclass(frozen=True)
class SignedIncidence:
    """Boundary map from p-faces to (p-1)-faces as a signed integer matrix.

    Row i lists the (p-1)-faces on the boundary of p-face i with their
    relative orientation.
    """

    p: int
    matrix: sp.csr_matrix

    def entries(self, i: int) -> list[tuple[int, int]]:
        row = self.matrix.getrow(i)
        return sorted(zip(row.indices.tolist(), row.data.astype(int).tolist()))


# ---------------------------------------------------------------------------
# cubical lattices


def _cube_face_axes(p: int, a: int) -> tuple[int, ...]:
    """Axes spanned by a p-face of block a (edge axis / face normal)."""
    if p == 1:
        return (a,)
    if p == 2:
        return ((a + 1) % 3, (a + 2) % 3)
    return (0, 1, 2)


def generate_cubical_lattice(nx: int, ny: int, nz: int,
                             dx: float, dy: float, dz: float) -> PeriodicMesh:
    """Periodic cubical lattice with ``nx*ny*nz`` cells.

    Vertex (i, j, k) has id ``(i*ny + j)*nz + k``. Edges along axis a are
    block a of the edge list, indexed by their base vertex; faces are blocked
    by normal axis the same way, oriented right-handed (dy^dz, dz^dx, dx^dy).
    """
    shape = (nx, ny, nz)
    spacing = (dx, dy, dz)
    if any(int(n) != n or n < 1 for n in shape):
        raise MeshError(f"cell counts must be positive integers, got {shape}")
    if any(not s > 0 for s in spacing):
        raise MeshError(f"lattice spacings must be positive, got {spacing}")
    shape = tuple(int(n) for n in shape)
    spacing = tuple(float(s) for s in spacing)
    nc = nx * ny * nz
    periods = tuple(n * s for n, s in zip(shape, spacing))

    ijk = np.array(list(product(range(nx), range(ny), range(nz))), dtype=np.int64)
    vertices = ijk * np.asarray(spacing)

    def vid(offset):
        w = ijk + offset
        return _lattice_index(np.mod(w, shape), shape), np.floor_divide(w, shape)

    unit = np.eye(3, dtype=np.int64)
    faces, shifts = {0: np.arange(nc)[:, None]}, {0: np.zeros((nc, 1, 3), dtype=np.int64)}

    # corner offsets of each p-face of block a, in cyclic/tensor order
    def corners(p, a):
        if p == 1:
            return [np.zeros(3, int), unit[a]]
        if p == 2:
            b, c = _cube_face_axes(2, a)
            return [np.zeros(3, int), unit[b], unit[b] + unit[c], unit[c]]
        return [np.array(o) for o in product((0, 1), repeat=3)]

    for p in (1, 2, 3):
        ids, sh = [], []
        for a in range(1 if p == 3 else 3):
            cols = [vid(o) for o in corners(p, a)]
            ids.append(np.stack([c[0] for c in cols], axis=1))
            sh.append(np.stack([c[1] for c in cols], axis=1))
        faces[p] = np.concatenate(ids)
        shifts[p] = np.concatenate(sh)

    cell_entities = {}
    base = _lattice_index(ijk, shape)
    loc = []
    for o in product((0, 1), repeat=3):
        loc.append(_lattice_index(np.mod(ijk + o, shape), shape))
    cell_entities[0] = np.stack(loc, axis=1)
    for p in (1, 2):
        loc = []
        for a in range(3):
            free = [b for b in range(3) if b not in _cube_face_axes(p, a)]
            for bits in product((0, 1), repeat=len(free)):
                o = np.zeros(3, int)
                o[free] = bits
                loc.append(a * nc + _lattice_index(np.mod(ijk + o, shape), shape))
        cell_entities[p] = np.stack(loc, axis=1)
    cell_entities[3] = base[:, None]

    return PeriodicMesh(3, periods, vertices, faces, shifts, "cube", cell_entities,
                        lattice_spacings=spacing, lattice_shape=shape)


def _lattice_index(ijk: np.ndarray, shape) -> np.ndarray:
    return (ijk[..., 0] * shape[1] + ijk[..., 1]) * shape[2] + ijk[..., 2]


def _cube_incidence(mesh: PeriodicMesh, p: int) -> sp.csr_matrix:
    nx, ny, nz = mesh.lattice_shape
    shape = mesh.lattice_shape
    nc = nx * ny * nz
    ijk = np.array(list(product(range(nx), range(ny), range(nz))), dtype=np.int64)
    base = _lattice_index(ijk, shape)
    unit = np.eye(3, dtype=np.int64)

    def at(offset):
        return _lattice_index(np.mod(ijk + offset, shape), shape)

    rows, cols, vals = [], [], []

    def add(r, c, s):
        rows.append(r)
        cols.append(c)
        vals.append(np.full(len(r), s))

    if p == 1:
        for a in range(3):
            add(a * nc + base, at(unit[a]), 1)
            add(a * nc + base, base, -1)
        n_rows = 3 * nc
    elif p == 2:
        for a in range(3):
            b, c = _cube_face_axes(2, a)
            r = a * nc + base
            add(r, b * nc + base, 1)
            add(r, c * nc + at(unit[b]), 1)
            add(r, b * nc + at(unit[c]), -1)
            add(r, c * nc + base, -1)
        n_rows = 3 * nc
    else:
        for a in range(3):
            add(base, a * nc + at(unit[a]), 1)
            add(base, a * nc + base, -1)
        n_rows = nc
    n_cols = mesh.n_faces(p - 1)
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_rows, n_cols)).tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    return m.astype(np.int64)


# ---------------------------------------------------------------------------
# triangulated 2-tori


def _normalize(images):
    """Sort vertex images and translate the first one to shift zero."""
    images = sorted(images)
    s0 = images[0][1]
    return tuple((v, tuple(a - b for a, b in zip(s, s0))) for v, s in images)


def _triangle_complex(vertices: np.ndarray, periods: tuple, tris: np.ndarray,
                      tshift: np.ndarray) -> PeriodicMesh:
    """Assemble the 2-complex from normalized triangles (ids + shifts)."""
    edge_ids: dict = {}
    cell_edges = np.empty((len(tris), 3), dtype=np.int64)
    for t in range(len(tris)):
        img = [(int(tris[t, i]), tuple(int(s) for s in tshift[t, i])) for i in range(3)]
        for le, (i, j) in enumerate(TRIANGLE_EDGES):
            key = _normalize([img[i], img[j]])
            cell_edges[t, le] = edge_ids.setdefault(key, len(edge_ids))
    edges = np.empty((len(edge_ids), 2), dtype=np.int64)
    eshift = np.empty((len(edge_ids), 2, 2), dtype=np.int64)
    for key, e in edge_ids.items():
        edges[e] = [key[0][0], key[1][0]]
        eshift[e] = [key[0][1], key[1][1]]
    nv = len(vertices)
    faces = {0: np.arange(nv)[:, None], 1: edges, 2: np.asarray(tris, dtype=np.int64)}
    shifts = {0: np.zeros((nv, 1, 2), dtype=np.int64), 1: eshift,
              2: np.asarray(tshift, dtype=np.int64)}
    cell_entities = {0: faces[2].copy(), 1: cell_edges, 2: np.arange(len(tris))[:, None]}
    return PeriodicMesh(2, tuple(float(p) for p in periods), np.asarray(vertices, dtype=float),
                        faces, shifts, "simplex", cell_entities)


def _triangle_list(images_per_tri) -> tuple[np.ndarray, np.ndarray]:
    keys = sorted({_normalize(t) for t in images_per_tri})
    tris = np.array([[v for v, _ in k] for k in keys], dtype=np.int64)
    tshift = np.array([[s for _, s in k] for k in keys], dtype=np.int64)
    return tris, tshift


def min_angle_degrees(mesh: PeriodicMesh) -> np.ndarray:
    """Smallest interior angle of every triangle, in degrees."""
    x = mesh.cell_coordinates()
    out = np.full(len(x), 180.0)
    for i in range(3):
        u = x[:, (i + 1) % 3] - x[:, i]
        v = x[:, (i + 2) % 3] - x[:, i]
        cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out = np.minimum(out, np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return out


def _validate_triangulation(mesh: PeriodicMesh) -> str | None:
    nv, ne, nt = (mesh.n_faces(p) for p in range(3))
    if nt != 2 * nv or ne != 3 * nv:
        return f"bad entity counts V={nv} E={ne} T={nt}"
    counts = np.bincount(mesh.cell_entities[1].ravel(), minlength=ne)
    if np.any(counts != 2):
        return "edge not shared by exactly two triangles"
    x = mesh.cell_coordinates()
    e1, e2 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    if not np.isclose(area.sum(), math.prod(mesh.periods), rtol=1e-9):
        return "triangles do not tile the torus"
    return None


def _periodic_delaunay(points: np.ndarray, periods) -> PeriodicMesh:
    n = len(points)
    L = np.asarray(periods)
    offsets = [(sx, sy) for sx in (-1, 0, 1) for sy in (-1, 0, 1)]
    tiled = np.concatenate([points + np.asarray(o) * L for o in offsets])
    tri = Delaunay(tiled, qhull_options="Qbb Qc Qz Q12 Qt")
    simp = tri.simplices
    x = tiled[simp]
    centers = _circumcenters(x)
    keep = np.all((centers >= 0) & (centers < L), axis=1)
    images = []
    for s in simp[keep]:
        images.append([(int(k % n), offsets[k // n]) for k in s])
    tris, tshift = _triangle_list(images)
    return _triangle_complex(points, tuple(periods), tris, tshift)


def _circumcenters(x: np.ndarray) -> np.ndarray:
    a, b, c = x[:, 0], x[:, 1], x[:, 2]
    b = b - a
    c = c - a
    d = 2.0 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    bb = np.einsum("ij,ij->i", b, b)
    cc = np.einsum("ij,ij->i", c, c)
    ux = (c[:, 1] * bb - b[:, 1] * cc) / d
    uy = (b[:, 0] * cc - c[:, 0] * bb) / d
    return a + np.stack([ux, uy], axis=1)


def generate_periodic_triangulation(n_vertices: int, Lx: float = 1.0, Ly: float = 1.0,
                                    seed: int = 0, method: str = "delaunay-tiled",
                                    jitter: float = 0.0, min_angle: float = 1.0,
                                    max_retries: int = 50) -> PeriodicMesh:
    """Triangulate the 2-torus ``[0, Lx) x [0, Ly)``.

    ``delaunay-tiled`` draws uniform random vertices, triangulates a 3x3
    periodic tiling and keeps the triangles whose circumcenters fall in the
    fundamental domain. Vertices of triangles with an angle below
    ``min_angle`` degrees are redrawn, at most ``max_retries`` times.

    ``structured-jittered`` needs ``n_vertices = k*k``; it splits a k-by-k
    grid of squares along one diagonal and then moves each vertex uniformly
    by at most ``jitter`` grid spacings per axis.
    """
    if n_vertices < 4:
        raise MeshError(f"need at least 4 vertices, got {n_vertices}")
    if not (Lx > 0 and Ly > 0):
        raise MeshError(f"domain lengths must be positive, got {(Lx, Ly)}")
    rng = np.random.default_rng(seed)
    if method == "structured-jittered":
        return _structured(n_vertices, Lx, Ly, rng, jitter, min_angle)
    if method != "delaunay-tiled":
        raise MeshError(f"unknown triangulation method {method!r}")

    L = np.array([Lx, Ly])
    points = rng.random((n_vertices, 2)) * L
    problem = None
    for _ in range(max_retries + 1):
        try:
            mesh = _periodic_delaunay(points, (Lx, Ly))
            problem = _validate_triangulation(mesh)
        except Exception as exc:  # qhull precision errors on degenerate sets
            mesh, problem = None, f"qhull failed: {exc}"
        if problem is not None:
            # degenerate or cocircular configuration: perturb everything a little
            h = math.sqrt(Lx * Ly / n_vertices)
            points = np.mod(points + 1e-3 * h * rng.standard_normal(points.shape), L)
            continue
        bad = min_angle_degrees(mesh) < min_angle
        if not bad.any():
            return mesh
        redraw = np.unique(mesh.faces[2][bad])
        points = points.copy()
        points[redraw] = rng.random((len(redraw), 2)) * L
        problem = f"{int(bad.sum())} triangles below {min_angle} degrees"
    raise MeshError(f"periodic triangulation failed after {max_retries} retries: {problem}")


def _structured(n_vertices, Lx, Ly, rng, jitter, min_angle) -> PeriodicMesh:
    k = int(round(math.sqrt(n_vertices)))
    if k * k != n_vertices:
        raise MeshError(f"structured triangulation needs a square vertex count, got {n_vertices}")
    if not 0 <= jitter < 0.5:
        raise MeshError(f"jitter must lie in [0, 0.5), got {jitter}")
    hx, hy = Lx / k, Ly / k
    ij = np.array(list(product(range(k), range(k))))
    raw = ij * [hx, hy] + jitter * (2 * rng.random((n_vertices, 2)) - 1) * [hx, hy]
    points = np.mod(raw, [Lx, Ly])
    # a vertex jittered across the wrap keeps its grid neighbours through its shift
    wrap = np.floor_divide(raw, [Lx, Ly]).astype(np.int64)

    def vid(i, j):
        v = (i % k) * k + (j % k)
        return v, tuple(int(s) for s in np.array([i // k, j // k]) + wrap[v])

    images = []
    for i, j in ij:
        a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
        images.append([a, b, c])
        images.append([a, c, d])
    tris, tshift = _triangle_list(images)
    mesh = _triangle_complex(points, (Lx, Ly), tris, tshift)
    x = mesh.cell_coordinates()
    e1, e2 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]
    if np.any(np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) > 0.75 * Lx * Ly):
        raise MeshError("jittered vertex crossed the periodic boundary")
    if np.any(min_angle_degrees(mesh) < min_angle):
        raise MeshError("jitter produced a triangle below the minimum angle")
    return mesh


# ---------------------------------------------------------------------------


def mesh_diameter(mesh: PeriodicMesh) -> float:
    """Largest distance between two vertices of one cell."""
    if mesh.cell_kind == "cube":
        return math.sqrt(sum(s * s for s in mesh.lattice_spacings))
    x = mesh.cell_coordinates()
    diam = 0.0
    for i, j in TRIANGLE_EDGES:
        diam = max(diam, float(np.linalg.norm(x[:, i] - x[:, j], axis=1).max()))
    return diam


def periodic_distance(mesh: PeriodicMesh, x, y) -> np.ndarray:
    """Minimal-image distance between points on the torus."""
    L = np.asarray(mesh.periods)
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    d = d - L * np.round(d / L)
    return np.linalg.norm(d, axis=-1)


def boundary_incidence(mesh: PeriodicMesh, p: int) -> SignedIncidence:
    """Signed boundary map from p-faces to (p-1)-faces."""
    if not 1 <= p <= mesh.dimension:
        raise MeshError(f"face dimension {p} out of range 1..{mesh.dimension}")
    if p not in mesh._incidence:
        if mesh.cell_kind == "cube":
            m = _cube_incidence(mesh, p)
        else:
            m = _simplex_incidence(mesh, p)
        mesh._incidence[p] = SignedIncidence(p, m)
    return mesh._incidence[p]


def _simplex_incidence(mesh: PeriodicMesh, p: int) -> sp.csr_matrix:
    n = mesh.n_faces(p)
    if p == 1:
        rows = np.repeat(np.arange(n), 2)
        cols = mesh.faces[1].ravel()
        vals = np.tile([-1, 1], n)
    else:
        rows = np.repeat(np.arange(n), 3)
        cols = mesh.cell_entities[1].ravel()
        vals = np.tile(TRIANGLE_EDGE_SIGNS, n)
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n, mesh.n_faces(p - 1))).tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    return m.astype(np.int64)
