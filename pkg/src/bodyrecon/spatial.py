"""Spatial queries against triangle meshes: inside tests, nearest points, rays.

A :class:`SurfaceIndex` bundles a mesh with a median-split bounding-volume
hierarchy built once at construction.  All queries are read-only afterwards
and safe to issue from multiple threads.  The inside test deliberately does
not use the BVH: it evaluates the generalized winding number as an exact sum
of signed solid angles over every face, which is robust where single-ray
parity is not (grazing rays, shared edges).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .mesh import TriMesh

_LEAF_SIZE = 8
_STACK_DEPTH = 128


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _closest_on_triangle(ax, ay, az, bx, by, bz, cx, cy, cz, px, py, pz):
    # Ericson, "Real-Time Collision Detection", ClosestPtPointTriangle.
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return (
        ax + abx * v + acx * w,
        ay + aby * v + acy * w,
        az + abz * v + acz * w,
    )


@njit(cache=True, inline="always")
def _box_dist_sq(lo, hi, px, py, pz):
    d = 0.0
    t = lo[0] - px
    if t > 0.0:
        d += t * t
    t = px - hi[0]
    if t > 0.0:
        d += t * t
    t = lo[1] - py
    if t > 0.0:
        d += t * t
    t = py - hi[1]
    if t > 0.0:
        d += t * t
    t = lo[2] - pz
    if t > 0.0:
        d += t * t
    t = pz - hi[2]
    if t > 0.0:
        d += t * t
    return d


@njit(cache=True, parallel=True)
def _bvh_nearest(tri, lo, hi, left, right, start, count, order, queries,
                 out_point, out_dist, out_face):
    for q in prange(queries.shape[0]):
        px, py, pz = queries[q, 0], queries[q, 1], queries[q, 2]
        best = np.inf
        bx = by = bz = 0.0
        bface = -1
        stack = np.empty(_STACK_DEPTH, dtype=np.int64)
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            if _box_dist_sq(lo[node], hi[node], px, py, pz) >= best:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    f = order[k]
                    cxp, cyp, czp = _closest_on_triangle(
                        tri[f, 0, 0], tri[f, 0, 1], tri[f, 0, 2],
                        tri[f, 1, 0], tri[f, 1, 1], tri[f, 1, 2],
                        tri[f, 2, 0], tri[f, 2, 1], tri[f, 2, 2],
                        px, py, pz,
                    )
                    dx, dy, dz = cxp - px, cyp - py, czp - pz
                    d = dx * dx + dy * dy + dz * dz
                    if d < best:
                        best = d
                        bx, by, bz = cxp, cyp, czp
                        bface = f
            else:
                l, r = left[node], right[node]
                dl = _box_dist_sq(lo[l], hi[l], px, py, pz)
                dr = _box_dist_sq(lo[r], hi[r], px, py, pz)
                # push the farther child first so the nearer one pops next
                if dl <= dr:
                    if dr < best:
                        stack[top] = r
                        top += 1
                    if dl < best:
                        stack[top] = l
                        top += 1
                else:
                    if dl < best:
                        stack[top] = l
                        top += 1
                    if dr < best:
                        stack[top] = r
                        top += 1
        out_point[q, 0], out_point[q, 1], out_point[q, 2] = bx, by, bz
        out_dist[q] = np.sqrt(best)
        out_face[q] = bface


@njit(cache=True, inline="always")
def _ray_box_hits(lo, hi, ox, oy, oz, ix, iy, iz, tmin, tmax):
    t0 = (lo[0] - ox) * ix
    t1 = (hi[0] - ox) * ix
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tmin:
        tmin = t0
    if t1 < tmax:
        tmax = t1
    t0 = (lo[1] - oy) * iy
    t1 = (hi[1] - oy) * iy
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tmin:
        tmin = t0
    if t1 < tmax:
        tmax = t1
    t0 = (lo[2] - oz) * iz
    t1 = (hi[2] - oz) * iz
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tmin:
        tmin = t0
    if t1 < tmax:
        tmax = t1
    return tmin <= tmax


@njit(cache=True, inline="always")
def _ray_triangle_t(tri, f, ox, oy, oz, dx, dy, dz):
    # Moller-Trumbore; returns line parameter t (any sign) or nan on miss.
    e1x = tri[f, 1, 0] - tri[f, 0, 0]
    e1y = tri[f, 1, 1] - tri[f, 0, 1]
    e1z = tri[f, 1, 2] - tri[f, 0, 2]
    e2x = tri[f, 2, 0] - tri[f, 0, 0]
    e2y = tri[f, 2, 1] - tri[f, 0, 1]
    e2z = tri[f, 2, 2] - tri[f, 0, 2]
    hx = dy * e2z - dz * e2y
    hy = dz * e2x - dx * e2z
    hz = dx * e2y - dy * e2x
    det = e1x * hx + e1y * hy + e1z * hz
    if -1e-14 < det < 1e-14:
        return np.nan
    inv = 1.0 / det
    sx = ox - tri[f, 0, 0]
    sy = oy - tri[f, 0, 1]
    sz = oz - tri[f, 0, 2]
    u = (sx * hx + sy * hy + sz * hz) * inv
    if u < 0.0 or u > 1.0:
        return np.nan
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.nan
    return (e2x * qx + e2y * qy + e2z * qz) * inv


@njit(cache=True, parallel=True)
def _bvh_any_hit(tri, lo, hi, left, right, start, count, order,
                 origins, dirs, out_hit):
    for q in prange(origins.shape[0]):
        ox, oy, oz = origins[q, 0], origins[q, 1], origins[q, 2]
        dx, dy, dz = dirs[q, 0], dirs[q, 1], dirs[q, 2]
        ix = 1.0 / dx if dx != 0.0 else np.inf
        iy = 1.0 / dy if dy != 0.0 else np.inf
        iz = 1.0 / dz if dz != 0.0 else np.inf
        hit = False
        stack = np.empty(_STACK_DEPTH, dtype=np.int64)
        stack[0] = 0
        top = 1
        while top > 0 and not hit:
            top -= 1
            node = stack[top]
            if not _ray_box_hits(lo[node], hi[node], ox, oy, oz, ix, iy, iz,
                                 0.0, np.inf):
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    t = _ray_triangle_t(tri, order[k], ox, oy, oz, dx, dy, dz)
                    if not np.isnan(t) and t >= 0.0:
                        hit = True
                        break
            else:
                stack[top] = left[node]
                top += 1
                stack[top] = right[node]
                top += 1
        out_hit[q] = hit


@njit(cache=True, parallel=True)
def _bvh_line_hit(tri, lo, hi, left, right, start, count, order,
                  origins, dirs, max_abs_t, out_t):
    """Signed line parameter of the intersection nearest the origin, or nan.

    Searches both directions along the line, restricted to |t| <= max_abs_t.
    """
    for q in prange(origins.shape[0]):
        ox, oy, oz = origins[q, 0], origins[q, 1], origins[q, 2]
        dx, dy, dz = dirs[q, 0], dirs[q, 1], dirs[q, 2]
        ix = 1.0 / dx if dx != 0.0 else np.inf
        iy = 1.0 / dy if dy != 0.0 else np.inf
        iz = 1.0 / dz if dz != 0.0 else np.inf
        best = np.inf
        best_t = np.nan
        stack = np.empty(_STACK_DEPTH, dtype=np.int64)
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            if not _ray_box_hits(lo[node], hi[node], ox, oy, oz, ix, iy, iz,
                                 -max_abs_t, max_abs_t):
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    t = _ray_triangle_t(tri, order[k], ox, oy, oz, dx, dy, dz)
                    if not np.isnan(t) and abs(t) <= max_abs_t and abs(t) < best:
                        best = abs(t)
                        best_t = t
            else:
                stack[top] = left[node]
                top += 1
                stack[top] = right[node]
                top += 1
        out_t[q] = best_t


@njit(cache=True, parallel=True, fastmath=True)
def _winding_numbers(tri, queries, out):
    # van Oosterom & Strackee signed solid angles, summed over all faces.
    for q in prange(queries.shape[0]):
        px, py, pz = queries[q, 0], queries[q, 1], queries[q, 2]
        total = 0.0
        for f in range(tri.shape[0]):
            ax = tri[f, 0, 0] - px
            ay = tri[f, 0, 1] - py
            az = tri[f, 0, 2] - pz
            bx = tri[f, 1, 0] - px
            by = tri[f, 1, 1] - py
            bz = tri[f, 1, 2] - pz
            cx = tri[f, 2, 0] - px
            cy = tri[f, 2, 1] - py
            cz = tri[f, 2, 2] - pz
            la = np.sqrt(ax * ax + ay * ay + az * az)
            lb = np.sqrt(bx * bx + by * by + bz * bz)
            lc = np.sqrt(cx * cx + cy * cy + cz * cz)
            num = (
                ax * (by * cz - bz * cy)
                + ay * (bz * cx - bx * cz)
                + az * (bx * cy - by * cx)
            )
            den = (
                la * lb * lc
                + (ax * bx + ay * by + az * bz) * lc
                + (bx * cx + by * cy + bz * cz) * la
                + (cx * ax + cy * ay + cz * az) * lb
            )
            total += np.arctan2(num, den)
        out[q] = total / (2.0 * np.pi)


# ---------------------------------------------------------------------------
# BVH construction and the query facade
# ---------------------------------------------------------------------------


def _build_bvh(tri: np.ndarray):
    n = tri.shape[0]
    prim_lo = tri.min(axis=1)
    prim_hi = tri.max(axis=1)
    centroids = tri.mean(axis=1)

    lo: list[np.ndarray] = []
    hi: list[np.ndarray] = []
    left: list[int] = []
    right: list[int] = []
    start: list[int] = []
    count: list[int] = []
    order = np.empty(n, dtype=np.int64)
    cursor = 0

    def new_node() -> int:
        lo.append(np.zeros(3))
        hi.append(np.zeros(3))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(lo) - 1

    root = new_node()
    stack = [(root, np.arange(n, dtype=np.int64))]
    while stack:
        node, idx = stack.pop()
        lo[node] = prim_lo[idx].min(axis=0)
        hi[node] = prim_hi[idx].max(axis=0)
        if len(idx) <= _LEAF_SIZE:
            nonlocal_start = cursor
            order[cursor : cursor + len(idx)] = idx
            cursor += len(idx)
            start[node] = nonlocal_start
            count[node] = len(idx)
            continue
        c = centroids[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        half = len(idx) // 2
        part = np.argpartition(c[:, axis], half)
        l_id, r_id = new_node(), new_node()
        left[node], right[node] = l_id, r_id
        stack.append((l_id, idx[part[:half]]))
        stack.append((r_id, idx[part[half:]]))

    return (
        np.asarray(lo),
        np.asarray(hi),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(start, dtype=np.int64),
        np.asarray(count, dtype=np.int64),
        order,
    )


class SurfaceIndex:
    """Immutable acceleration structure over one mesh's triangles."""

    def __init__(self, mesh: TriMesh):
        if mesh.n_faces == 0:
            raise ValueError("cannot index an empty mesh")
        self.mesh = mesh
        self.tri = np.ascontiguousarray(mesh.triangles())
        (self._lo, self._hi, self._left, self._right,
         self._start, self._count, self._order) = _build_bvh(self.tri)

    def nearest(self, points: np.ndarray):
        """Closest surface point, distance and face id per query point."""
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        out_point = np.empty_like(points)
        out_dist = np.empty(len(points))
        out_face = np.empty(len(points), dtype=np.int64)
        _bvh_nearest(self.tri, self._lo, self._hi, self._left, self._right,
                     self._start, self._count, self._order, points,
                     out_point, out_dist, out_face)
        return out_point, out_dist, out_face

    def any_hit(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
        dirs = np.ascontiguousarray(np.atleast_2d(dirs), dtype=np.float64)
        out = np.empty(len(origins), dtype=np.bool_)
        _bvh_any_hit(self.tri, self._lo, self._hi, self._left, self._right,
                     self._start, self._count, self._order, origins, dirs, out)
        return out

    def line_nearest_hit(self, origins: np.ndarray, dirs: np.ndarray,
                         max_abs_t: float) -> np.ndarray:
        """Signed parameter of the closest line/surface intersection (nan if none)."""
        origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
        dirs = np.ascontiguousarray(np.atleast_2d(dirs), dtype=np.float64)
        out = np.empty(len(origins))
        _bvh_line_hit(self.tri, self._lo, self._hi, self._left, self._right,
                      self._start, self._count, self._order, origins, dirs,
                      float(max_abs_t), out)
        return out

    def winding(self, points: np.ndarray) -> np.ndarray:
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        out = np.empty(len(points))
        _winding_numbers(self.tri, points, out)
        return out

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Inside test via generalized winding number; 0.5 ties count as inside."""
        return self.winding(points) >= 0.5


def surface_index(mesh: TriMesh) -> SurfaceIndex:
    """Index for ``mesh``, built on first use and cached on the instance."""
    index = getattr(mesh, "_surface_index", None)
    if index is None:
        index = SurfaceIndex(mesh)
        mesh._surface_index = index
    return index


def contains(mesh: TriMesh, points: np.ndarray):
    """True where the generalized winding number of ``points`` exceeds 0.5.

    Accepts a single point or an (N, 3) batch; the mesh must be watertight
    for the result to be meaningful.
    """
    single = np.asarray(points).ndim == 1
    result = surface_index(mesh).contains(points)
    return bool(result[0]) if single else result


def nearest_on_surface(mesh: TriMesh, points: np.ndarray):
    """Exact closest point on the mesh: (point, distance, face id) per query."""
    single = np.asarray(points).ndim == 1
    pt, dist, face = surface_index(mesh).nearest(points)
    if single:
        return pt[0], float(dist[0]), int(face[0])
    return pt, dist, face
