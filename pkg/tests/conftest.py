"""Shared fixtures: analytic meshes and independent test oracles.

The oracles here deliberately avoid the production code paths they check:
the inside test is single-ray parity over an exhaustive face scan (no BVH,
no winding numbers), and the nearest-point oracle scans every triangle.
"""

import numpy as np
import pytest

from bodyrecon.mesh import TriMesh


# ---------------------------------------------------------------------------
# analytic fixture meshes
# ---------------------------------------------------------------------------


def make_cube(lo=0.0, hi=1.0) -> TriMesh:
    """Axis-aligned cube with outward-oriented faces."""
    g = [lo, hi]
    verts = np.array([[x, y, z] for x in g for y in g for z in g], dtype=float)
    # indices: bit2 = x, bit1 = y, bit0 = z
    quads = [
        (0, 1, 3, 2),  # x = lo, normal -x
        (4, 6, 7, 5),  # x = hi, normal +x
        (0, 4, 5, 1),  # y = lo, normal -y
        (2, 3, 7, 6),  # y = hi, normal +y
        (0, 2, 6, 4),  # z = lo, normal -z
        (1, 5, 7, 3),  # z = hi, normal +z
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return TriMesh(verts, np.array(faces))


def make_icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Geodesic sphere from a subdivided icosahedron, vertices on the sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    cache: dict[tuple[int, int], int] = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = verts[i] + verts[j]
            m /= np.linalg.norm(m)
            verts.append(m)
            cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    vertices = np.array(verts) * radius + np.asarray(center)
    return TriMesh(vertices, np.array(faces))


def make_tetrahedron() -> TriMesh:
    verts = np.array([
        [1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1],
    ], dtype=float)
    faces = np.array([(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)])
    return TriMesh(verts, faces)


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def ray_parity_contains(mesh: TriMesh, points: np.ndarray,
                        seed: int = 0) -> np.ndarray:
    """Inside test by single-ray crossing parity over an exhaustive face scan.

    Rays with grazing or near-edge hits are retried in a fresh random
    direction, so the oracle is exact with probability one.
    """
    points = np.atleast_2d(points)
    tri = mesh.triangles()
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = v1 - v0
    e2 = v2 - v0
    rng = np.random.default_rng(seed)
    out = np.zeros(len(points), dtype=bool)
    for i, p in enumerate(points):
        for _ in range(32):
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            h = np.cross(d, e2)
            det = np.einsum("ij,ij->i", e1, h)
            ok = np.abs(det) > 1e-12
            inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
            s = p - v0
            u = np.einsum("ij,ij->i", s, h) * inv
            q = np.cross(s, e1)
            v = (q @ d) * inv
            t = np.einsum("ij,ij->i", e2, q) * inv
            hit = ok & (u > 0) & (u < 1) & (v > 0) & (u + v < 1) & (t > 1e-12)
            margin = 1e-9
            risky = ok & (
                (np.abs(u) < margin) | (np.abs(u - 1) < margin)
                | (np.abs(v) < margin) | (np.abs(u + v - 1) < margin)
                | (np.abs(t) < margin)
            )
            if not np.any(risky & ~hit) and not np.any(hit & risky):
                out[i] = bool(np.count_nonzero(hit) % 2)
                break
        else:  # pragma: no cover - vanishing probability
            raise RuntimeError("no clean ray found")
    return out


def brute_force_nearest(mesh: TriMesh, points: np.ndarray):
    """Exhaustive closest-point scan over every face (no acceleration)."""
    from bodyrecon.spatial import _closest_on_triangle

    tri = mesh.triangles()
    points = np.atleast_2d(points)
    closest = np.zeros_like(points)
    dists = np.zeros(len(points))
    faces = np.zeros(len(points), dtype=np.int64)
    for i, p in enumerate(points):
        best = np.inf
        for f in range(len(tri)):
            c = _closest_on_triangle(
                tri[f, 0, 0], tri[f, 0, 1], tri[f, 0, 2],
                tri[f, 1, 0], tri[f, 1, 1], tri[f, 1, 2],
                tri[f, 2, 0], tri[f, 2, 1], tri[f, 2, 2],
                p[0], p[1], p[2],
            )
            d = (c[0] - p[0]) ** 2 + (c[1] - p[1]) ** 2 + (c[2] - p[2]) ** 2
            if d < best:
                best = d
                closest[i] = c
                faces[i] = f
        dists[i] = np.sqrt(best)
    return closest, dists, faces


def finite_difference_check(loss_fn, params, n_trials: int = 25, h: float = 1e-4,
                            seed: int = 0) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn()`` must rebuild the loss from the current parameter values;
    gradients must already be stored on the parameters.

    Central differences only estimate a derivative where the loss is smooth
    across the probe interval; relu networks are piecewise linear and a
    +/-h probe occasionally straddles a vertex.  Probes whose fd(h) and
    fd(h/2) disagree are therefore redrawn -- they measure the kink, not the
    gradient.
    """
    rng = np.random.default_rng(seed)

    def central(flat, i, orig, step):
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        return (up - down) / (2.0 * step)

    worst = 0.0
    checked = 0
    redraws = 0
    while checked < n_trials:
        p = params[int(rng.integers(len(params)))]
        if p.grad is None:
            continue
        i = int(rng.integers(p.data.size))
        flat = p.data.reshape(-1)
        orig = flat[i]
        fd = central(flat, i, orig, h)
        fd_half = central(flat, i, orig, h / 2)
        scale = max(abs(fd), abs(fd_half), 1e-10)
        if abs(fd - fd_half) / scale > 1e-6:
            redraws += 1
            if redraws > 5 * n_trials:  # pragma: no cover
                raise RuntimeError("loss not smooth anywhere near the probes")
            continue
        an = p.grad.reshape(-1)[i]
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-10)
        worst = max(worst, rel)
        checked += 1
    return worst


# ---------------------------------------------------------------------------
# pytest fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def unit_cube() -> TriMesh:
    return make_cube(0.0, 1.0)


@pytest.fixture(scope="session")
def icosphere() -> TriMesh:
    return make_icosphere(radius=1.0, subdivisions=3)


@pytest.fixture(scope="session")
def tetrahedron() -> TriMesh:
    return make_tetrahedron()
