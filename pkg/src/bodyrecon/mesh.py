"""Indexed triangle meshes and the geometry kernels built on them.

The :class:`TriMesh` container carries every surface in the pipeline:
ground-truth bodies, their Laplacian-smoothed counterparts, and the
meshes produced by isosurface extraction.  All heavier spatial queries
(inside tests, nearest-surface, ray casts) live in :mod:`bodyrecon.spatial`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MeshError


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box with ``lo <= hi`` componentwise."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"invalid bounds: lo={lo} exceeds hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def of_points(cls, points: np.ndarray, margin: float = 0.0) -> "Aabb":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if points.size == 0:
            raise ValueError("cannot bound an empty point set")
        return cls(points.min(axis=0) - margin, points.max(axis=0) + margin)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return np.all((points >= self.lo) & (points <= self.hi), axis=-1)


@dataclass
class TriMesh:
    """Indexed triangle mesh.

    Parameters
    ----------
    vertices : (N, 3) float array
        Vertex positions in model units.
    faces : (F, 3) int array
        Vertex-index triples, counter-clockwise seen from outside.
    normals : (N, 3) float array, optional
        Per-vertex unit normals.
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise MeshError("face index out of range")
            a, b, c = self.faces.T
            if np.any((a == b) | (b == c) | (a == c)):
                raise MeshError("degenerate face: repeated vertex index")
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.vertices):
                raise MeshError("normal count does not match vertex count")
            lengths = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(lengths - 1.0) > 1e-6):
                raise MeshError("normals must have unit length")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def bounds(self, margin: float = 0.0) -> Aabb:
        return Aabb.of_points(self.vertices, margin=margin)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) array of face corner positions."""
        return self.vertices[self.faces]

    def face_normals(self) -> np.ndarray:
        """Unit face normals; zero vector for zero-area faces."""
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        lengths = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, lengths, out=np.zeros_like(n), where=lengths > 0)

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(n, axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def with_normals(self) -> "TriMesh":
        """Copy of the mesh with vertex normals attached (computed if absent)."""
        if self.normals is not None:
            return self
        return TriMesh(self.vertices, self.faces, compute_vertex_normals(self))

    def copy(self) -> "TriMesh":
        return TriMesh(
            self.vertices.copy(),
            self.faces.copy(),
            None if self.normals is None else self.normals.copy(),
        )

    def content_hash(self) -> int:
        """Stable 64-bit hash of the geometry, used to derive sampling seeds."""
        import hashlib

        h = hashlib.blake2b(digest_size=8)
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return int.from_bytes(h.digest(), "little")


def compute_vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Angle-weighted average of incident-face normals, unit length.

    Raises
    ------
    MeshError
        If any vertex has no incident face (its normal would be zero).
    """
    if mesh.n_faces == 0:
        raise MeshError("mesh has no faces")
    tri = mesh.triangles()
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    lengths = np.linalg.norm(fn, axis=1, keepdims=True)
    fn = np.divide(fn, lengths, out=np.zeros_like(fn), where=lengths > 0)

    acc = np.zeros_like(mesh.vertices)
    for corner in range(3):
        e1 = tri[:, (corner + 1) % 3] - tri[:, corner]
        e2 = tri[:, (corner + 2) % 3] - tri[:, corner]
        n1 = np.linalg.norm(e1, axis=1)
        n2 = np.linalg.norm(e2, axis=1)
        denom = np.maximum(n1 * n2, 1e-300)
        cosang = np.clip(np.einsum("ij,ij->i", e1, e2) / denom, -1.0, 1.0)
        angles = np.arccos(cosang)
        np.add.at(acc, mesh.faces[:, corner], fn * angles[:, None])

    lengths = np.linalg.norm(acc, axis=1)
    missing = lengths < 1e-300
    if np.any(missing):
        raise MeshError(
            f"vertex {int(np.flatnonzero(missing)[0])} has no incident face; "
            "normal is undefined"
        )
    return acc / lengths[:, None]


def vertex_adjacency(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """CSR-style (offsets, neighbors) arrays of the undirected vertex graph."""
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    both = np.concatenate([edges, edges[:, ::-1]])
    both = np.unique(both, axis=0)
    counts = np.bincount(both[:, 0], minlength=mesh.n_vertices)
    offsets = np.zeros(mesh.n_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, both[:, 1].copy()


def laplacian_smooth(mesh: TriMesh, iterations: int = 30, lam: float = 0.5) -> TriMesh:
    """Uniform-weight (umbrella) Laplacian smoothing.

    Each iteration moves every vertex by ``lam`` times the offset to the
    centroid of its neighbors, then restores the mesh barycenter (the
    umbrella operator drifts it on irregular valences).  Connectivity is
    unchanged; normals are dropped since they no longer match.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if not (0.0 < lam <= 1.0):
        raise ValueError("lam must lie in (0, 1]")
    if iterations == 0:
        return TriMesh(mesh.vertices.copy(), mesh.faces.copy())

    offsets, neighbors = vertex_adjacency(mesh)
    degrees = np.diff(offsets).astype(np.float64)
    if np.any(degrees == 0):
        raise MeshError("smoothing requires every vertex to have a neighbor")

    v = mesh.vertices.copy()
    barycenter = v.mean(axis=0)
    seg = offsets[:-1]
    for _ in range(iterations):
        sums = np.add.reduceat(v[neighbors], seg, axis=0)
        v = v + lam * (sums / degrees[:, None] - v)
        v += barycenter - v.mean(axis=0)
    return TriMesh(v, mesh.faces.copy())


def _halfedges(faces: np.ndarray) -> np.ndarray:
    return np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])


def is_watertight(mesh: TriMesh) -> bool:
    """True iff every edge is shared by exactly two consistently oriented faces.

    Equivalently: no directed half-edge repeats, and every half-edge has its
    reverse present.
    """
    if mesh.n_faces == 0:
        return False
    he = _halfedges(mesh.faces)
    keys = he[:, 0] * mesh.n_vertices + he[:, 1]
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 1):
        return False
    rev = he[:, 1] * mesh.n_vertices + he[:, 0]
    return bool(np.all(np.isin(rev, uniq, assume_unique=False)))


def sample_surface(
    mesh: TriMesh, n: int, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``n`` area-weighted surface samples.

    Returns
    -------
    points : (n, 3) array
    face_ids : (n,) int array
    bary : (n, 3) array of barycentric coordinates.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return (
            np.zeros((0, 3)),
            np.zeros(0, dtype=np.int64),
            np.zeros((0, 3)),
        )
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise MeshError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face_ids = rng.choice(mesh.n_faces, size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    s = np.sqrt(r1)
    bary = np.stack([1.0 - s, s * (1.0 - r2), s * r2], axis=1)
    tri = mesh.vertices[mesh.faces[face_ids]]
    points = np.einsum("ij,ijk->ik", bary, tri)
    return points, face_ids, bary


def load_obj(path: str | Path) -> TriMesh:
    """Load an ASCII OBJ restricted to ``v``/``f`` records (1-based indices)."""
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: malformed vertex record")
                vertices.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                idx = [p.split("/")[0] for p in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"{path}:{lineno}: only triangular faces are supported")
                faces.append([int(i) - 1 for i in idx])
            # other record types (vn, vt, o, g, s, usemtl, ...) are ignored
    if not vertices:
        raise MeshError(f"{path}: no vertices found")
    return TriMesh(np.array(vertices), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: TriMesh, path: str | Path) -> None:
    """Write vertices and faces as ASCII OBJ; coordinates round-trip exactly."""
    with open(path, "w", encoding="ascii") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.faces.tolist():
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")
