"""Isosurface extraction: octree-refined field evaluation and marching cubes.

``mise_extract`` evaluates an implicit occupancy field on a coarse lattice
and recursively subdivides only the cells whose corners disagree about the
threshold, so the expensive network is queried near the surface only.  The
resulting node grid goes through standard 256-case marching cubes.  Cells on
the bounding-box boundary are closed by treating everything outside the box
as empty, so extracted surfaces are watertight.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import FieldEvaluationError, MeshError, NoIsosurface
from .mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .mesh import Aabb, TriMesh

FieldFn = Callable[[np.ndarray], np.ndarray]
"""Batch field contract: (M, 3) points -> (M,) values in [0, 1], pointwise."""


@dataclass
class OccupancyGrid:
    """Scalar values sampled at the nodes of a regular lattice over ``bbox``.

    ``values`` has shape ``(rx + 1, ry + 1, rz + 1)`` for cell resolution
    ``(rx, ry, rz)``.
    """

    bbox: Aabb
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError("values must be a 3D node array, >= 2 nodes per axis")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @property
    def resolution(self) -> tuple[int, int, int]:
        s = self.values.shape
        return (s[0] - 1, s[1] - 1, s[2] - 1)

    @property
    def spacing(self) -> np.ndarray:
        return self.bbox.extent / np.asarray(self.resolution, dtype=np.float64)

    def node_position(self, i, j, k) -> np.ndarray:
        return self.bbox.lo + self.spacing * np.stack(
            np.broadcast_arrays(i, j, k), axis=-1
        )

    def save(self, path: str | Path) -> None:
        """Binary dump: '<3I6d' header (dims, bbox) + little-endian f32 blob."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<3I", *self.values.shape))
            fh.write(struct.pack("<6d", *self.bbox.lo, *self.bbox.hi))
            fh.write(self.values.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "OccupancyGrid":
        with open(path, "rb") as fh:
            nx, ny, nz = struct.unpack("<3I", fh.read(12))
            bounds = struct.unpack("<6d", fh.read(48))
            blob = np.frombuffer(fh.read(), dtype="<f4")
        if blob.size != nx * ny * nz:
            raise ValueError(f"{path}: truncated grid dump")
        return cls(Aabb(bounds[:3], bounds[3:]), blob.reshape(nx, ny, nz).astype(np.float64))


def _check_power_of_two(name: str, value: int) -> None:
    if value < 1 or value & (value - 1):
        raise ValueError(f"{name} must be a power of two, got {value}")


def _evaluate(field: FieldFn, points: np.ndarray) -> np.ndarray:
    values = np.asarray(field(points), dtype=np.float64).reshape(-1)
    if values.shape[0] != points.shape[0]:
        raise FieldEvaluationError(
            f"field returned {values.shape[0]} values for {points.shape[0]} points"
        )
    if not np.all(np.isfinite(values)):
        raise FieldEvaluationError("field returned non-finite values")
    return values


def mise_extract(
    field: FieldFn,
    bbox: Aabb,
    initial_res: int = 32,
    final_res: int = 128,
    tau: float = 0.5,
) -> OccupancyGrid:
    """Multi-resolution field evaluation via corner-disagreement octree refinement.

    Starts from a dense ``initial_res`` lattice and subdivides only cells whose
    corner occupancies (``value >= tau``) disagree, down to ``final_res`` cells
    per axis.  Nodes interior to uniform blocks are filled with 0 or 1 by
    propagation; every node of the returned grid classifies identically to a
    dense evaluation whenever the field has no features smaller than the
    initial cells.
    """
    _check_power_of_two("initial_res", initial_res)
    _check_power_of_two("final_res", final_res)
    if initial_res > final_res:
        raise ValueError("initial_res must not exceed final_res")

    n = final_res
    spacing = bbox.extent / n
    values = np.zeros((n + 1, n + 1, n + 1), dtype=np.float64)
    known = np.zeros((n + 1, n + 1, n + 1), dtype=bool)

    def eval_nodes(nodes: np.ndarray) -> None:
        points = bbox.lo + nodes * spacing
        values[nodes[:, 0], nodes[:, 1], nodes[:, 2]] = _evaluate(field, points)
        known[nodes[:, 0], nodes[:, 1], nodes[:, 2]] = True

    step = n // initial_res
    axis = np.arange(0, n + 1, step, dtype=np.int64)
    grid_nodes = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    eval_nodes(grid_nodes.reshape(-1, 3))

    cell_axis = np.arange(0, n, step, dtype=np.int64)
    cells = np.stack(
        np.meshgrid(cell_axis, cell_axis, cell_axis, indexing="ij"), axis=-1
    ).reshape(-1, 3)

    uniform_blocks: list[tuple[np.ndarray, int, np.ndarray]] = []
    while True:
        corners = cells[:, None, :] + CORNER_OFFSETS[None, :, :] * step
        occ = values[corners[..., 0], corners[..., 1], corners[..., 2]] >= tau
        agree = np.all(occ == occ[:, :1], axis=1)
        if np.any(agree):
            uniform_blocks.append((cells[agree], step, occ[agree, 0]))
        active = cells[~agree]
        if step == 1 or len(active) == 0:
            break
        step //= 2
        # children corner lattice: 27 nodes per active cell at the halved step
        off = np.arange(3, dtype=np.int64) * step
        lattice = np.stack(np.meshgrid(off, off, off, indexing="ij"), axis=-1).reshape(-1, 3)
        nodes = (active[:, None, :] + lattice[None, :, :]).reshape(-1, 3)
        nodes = np.unique(nodes, axis=0)
        fresh = ~known[nodes[:, 0], nodes[:, 1], nodes[:, 2]]
        if np.any(fresh):
            eval_nodes(nodes[fresh])
        child_off = CORNER_OFFSETS * step
        cells = (active[:, None, :] + child_off[None, :, :]).reshape(-1, 3)

    # propagate block classification into never-evaluated interior nodes
    for block_cells, block_step, occupied in uniform_blocks:
        if block_step == 1:
            continue
        fill = np.where(occupied, 1.0, 0.0)
        for cell, value in zip(block_cells, fill):
            sl = (
                slice(cell[0], cell[0] + block_step + 1),
                slice(cell[1], cell[1] + block_step + 1),
                slice(cell[2], cell[2] + block_step + 1),
            )
            region = known[sl]
            values[sl][~region] = value
            known[sl] = True

    return OccupancyGrid(bbox, values)


# canonical per-cell edge descriptors: lower node offset and axis of each of
# the 12 cube edges, so shared edges of neighboring cells get identical keys
_EDGE_NODE = np.minimum(
    CORNER_OFFSETS[EDGE_CORNERS[:, 0]], CORNER_OFFSETS[EDGE_CORNERS[:, 1]]
)
_EDGE_AXIS = np.argmax(
    np.abs(CORNER_OFFSETS[EDGE_CORNERS[:, 0]] - CORNER_OFFSETS[EDGE_CORNERS[:, 1]]),
    axis=1,
)


def marching_cubes(grid: OccupancyGrid, tau: float) -> TriMesh:
    """Extract the ``tau`` level set as a consistently oriented triangle mesh.

    Crossing positions are interpolated linearly in value space,
    ``t = (tau - v0) / (v1 - v0)``.  The grid is implicitly surrounded by a
    layer of empty nodes, which closes any surface touching the bounding box.

    Raises
    ------
    NoIsosurface
        If every grid value is on the same side of ``tau``.
    """
    inside = grid.values >= tau
    if np.all(inside) or not np.any(inside):
        raise NoIsosurface("grid does not cross the threshold")

    # pad with empty nodes one cell beyond the bbox on every side
    vals = np.pad(grid.values, 1, mode="constant", constant_values=0.0)
    spacing = grid.spacing
    origin = grid.bbox.lo - spacing

    ncx, ncy, ncz = vals.shape[0] - 1, vals.shape[1] - 1, vals.shape[2] - 1
    occ = vals >= tau

    # 8-bit configuration per cell (bit c set when corner c is below tau,
    # matching the lookup tables' convention)
    index = np.zeros((ncx, ncy, ncz), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        corner = ~occ[dx : dx + ncx, dy : dy + ncy, dz : dz + ncz]
        index |= corner.astype(np.int64) << c

    crossing = EDGE_TABLE[index] != 0
    cell_ids = np.argwhere(crossing)
    if len(cell_ids) == 0:
        raise NoIsosurface("grid does not cross the threshold")
    configs = index[crossing]
    edge_masks = EDGE_TABLE[configs]

    # global edge key = (flat id of the edge's lower node) * 3 + axis
    node_strides = np.array(
        [(ncy + 1) * (ncz + 1), ncz + 1, 1], dtype=np.int64
    )
    lower_nodes = cell_ids[:, None, :] + _EDGE_NODE[None, :, :]
    keys = (lower_nodes @ node_strides) * 3 + _EDGE_AXIS[None, :]

    flagged = (edge_masks[:, None] & (1 << np.arange(12))) != 0
    used_keys = keys[flagged]
    uniq_keys, inverse = np.unique(used_keys, return_inverse=True)

    vertex_ids = np.full((len(cell_ids), 12), -1, dtype=np.int64)
    vertex_ids[flagged] = inverse

    # interpolate one vertex per unique crossing edge
    axes = uniq_keys % 3
    flat_nodes = uniq_keys // 3
    n0 = np.stack(
        [
            flat_nodes // ((ncy + 1) * (ncz + 1)),
            (flat_nodes // (ncz + 1)) % (ncy + 1),
            flat_nodes % (ncz + 1),
        ],
        axis=1,
    )
    n1 = n0.copy()
    n1[np.arange(len(n1)), axes] += 1
    v0 = vals[n0[:, 0], n0[:, 1], n0[:, 2]]
    v1 = vals[n1[:, 0], n1[:, 1], n1[:, 2]]
    t = (tau - v0) / (v1 - v0)
    positions = origin + spacing * (n0 + t[:, None] * (n1 - n0))

    # assemble faces from the triangle table
    tri_rows = TRI_TABLE[configs][:, :15].reshape(-1, 5, 3)
    valid = tri_rows[:, :, 0] >= 0
    cells_rep = np.repeat(np.arange(len(cell_ids)), 5).reshape(-1, 5)
    faces = np.stack(
        [
            vertex_ids[cells_rep[valid], tri_rows[:, :, 0][valid]],
            vertex_ids[cells_rep[valid], tri_rows[:, :, 1][valid]],
            vertex_ids[cells_rep[valid], tri_rows[:, :, 2][valid]],
        ],
        axis=1,
    )
    return TriMesh(positions, faces)


def apply_displacements(smooth: TriMesh, d: np.ndarray) -> TriMesh:
    """Offset every vertex by ``d`` along its unit normal; topology unchanged.

    The returned mesh keeps the input normals attached (they define the
    displacement direction field), so applying ``-d`` to the result restores
    the original vertices exactly.
    """
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if smooth.normals is None:
        raise MeshError("displacement requires vertex normals on the smooth mesh")
    if len(d) != smooth.n_vertices:
        raise MeshError(
            f"displacement count {len(d)} != vertex count {smooth.n_vertices}"
        )
    vertices = smooth.vertices + d[:, None] * smooth.normals
    return TriMesh(vertices, smooth.faces.copy(), smooth.normals.copy())


def reconstruct_smooth(
    model,
    obs,
    tau: float = 0.96,
    resolutions: tuple[int, int] = (32, 128),
) -> TriMesh:
    """Extract the coarse mesh: MISE over the model's occupancy field, then MC.

    The latent code is fixed at the prior mean (zeros) for inference; the
    volumetric domain is the bounding box baked into the trained model.
    """
    field = model.occupancy_field(obs)
    grid = mise_extract(field, model.domain, resolutions[0], resolutions[1], tau)
    return marching_cubes(grid, tau)


def reconstruct_detailed(
    coarse,
    disp,
    obs,
    tau: float = 0.96,
    resolutions: tuple[int, int] = (32, 128),
) -> TriMesh:
    """Full pipeline: coarse mesh, per-vertex displacement regression, offset."""
    smooth = reconstruct_smooth(coarse, obs, tau, resolutions).with_normals()
    d = disp.displacement_field(obs, smooth.vertices)
    return apply_displacements(smooth, d)
