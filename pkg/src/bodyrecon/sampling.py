"""Training-query generation: point sampling strategies, occupancy labels,
joint heatmaps and displacement ground truth.

Occupancy supervision mixes three strategies: uniform points in the bounding
volume, dense samples near the surface, and samples inside spheres around the
face and hand joints (feet get no dedicated samples).  Labels always come
from the winding-number inside test against the watertight target mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import MeshError
from .mesh import Aabb, TriMesh, sample_surface
from .spatial import surface_index

JOINT_NAMES = (
    "pelvis",
    "spine",
    "neck",
    "head",
    "nose",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)
N_JOINTS = len(JOINT_NAMES)  # 17

# spheres are centered on face and hand joints only
FOCUS_JOINTS = ("head", "nose", "left_wrist", "right_wrist")


class Strategy(IntEnum):
    UNIFORM = 0
    DENSE_SURFACE = 1
    JOINT_SPHERE = 2


@dataclass(frozen=True)
class JointSet:
    """The 17 named body joints in 3D and (optionally) projected to pixels."""

    joints3d: np.ndarray
    joints2d: np.ndarray | None = None

    def __post_init__(self):
        j3 = np.asarray(self.joints3d, dtype=np.float64)
        if j3.shape != (N_JOINTS, 3):
            raise ValueError(f"joints3d must be ({N_JOINTS}, 3), got {j3.shape}")
        object.__setattr__(self, "joints3d", j3)
        if self.joints2d is not None:
            j2 = np.asarray(self.joints2d, dtype=np.float64)
            if j2.shape != (N_JOINTS, 2):
                raise ValueError(f"joints2d must be ({N_JOINTS}, 2), got {j2.shape}")
            object.__setattr__(self, "joints2d", j2)

    def position(self, name: str) -> np.ndarray:
        return self.joints3d[JOINT_NAMES.index(name)]


@dataclass(frozen=True)
class OccupancySample:
    point: np.ndarray
    label: bool
    strategy: Strategy


@dataclass
class SampleSet:
    """Struct-of-arrays batch of occupancy samples."""

    points: np.ndarray
    labels: np.ndarray
    strategies: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        self.strategies = np.asarray(self.strategies, dtype=np.uint8).reshape(-1)
        if not (len(self.points) == len(self.labels) == len(self.strategies)):
            raise ValueError("points, labels and strategies must have equal length")

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i: int) -> OccupancySample:
        return OccupancySample(
            self.points[i], bool(self.labels[i]), Strategy(self.strategies[i])
        )


@dataclass
class Observation:
    """Conditioning input for the networks: silhouette plus joint heatmaps."""

    silhouette: np.ndarray
    heatmaps: np.ndarray
    joints2d: np.ndarray | None = None

    def __post_init__(self):
        self.silhouette = np.asarray(self.silhouette, dtype=np.float64)
        self.heatmaps = np.asarray(self.heatmaps, dtype=np.float64)
        if self.silhouette.ndim != 2:
            raise ValueError("silhouette must be a 2D raster")
        if self.heatmaps.shape[:2] != self.silhouette.shape:
            raise ValueError(
                f"heatmap raster {self.heatmaps.shape[:2]} does not match "
                f"silhouette {self.silhouette.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.silhouette.shape

    @property
    def n_joint_channels(self) -> int:
        return self.heatmaps.shape[2]

    def raster(self, use_joints: bool = True) -> np.ndarray:
        """Stacked (H, W, C) conditioning raster; silhouette is channel 0."""
        sil = self.silhouette[:, :, None]
        if not use_joints:
            return sil
        return np.concatenate([sil, self.heatmaps], axis=2)


def sample_uniform(bbox: Aabb, k: int, seed: int) -> np.ndarray:
    """``k`` i.i.d. uniform points inside the box."""
    rng = np.random.default_rng(seed)
    return rng.uniform(size=(k, 3)) * bbox.extent + bbox.lo


def sample_near_surface(mesh: TriMesh, k: int, sigma: float, seed: int) -> np.ndarray:
    """Area-weighted surface samples perturbed by isotropic Gaussian noise."""
    rng = np.random.default_rng(seed)
    points, _, _ = sample_surface(mesh, k, seed=int(rng.integers(2**63)))
    return points + sigma * rng.standard_normal((k, 3))


def sample_joint_spheres(joints: JointSet, radius: float, k: int, seed: int) -> np.ndarray:
    """Uniform samples in the union of balls centered on face and hand joints.

    Overlapping balls are handled by rejection so density stays uniform over
    the union.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    centers = np.stack([joints.position(n) for n in FOCUS_JOINTS])
    rng = np.random.default_rng(seed)
    out = np.empty((k, 3))
    have = 0
    while have < k:
        need = k - have
        idx = rng.integers(len(centers), size=need)
        # uniform in the unit ball via radius ~ U^(1/3)
        direction = rng.standard_normal((need, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        r = radius * rng.random(need) ** (1.0 / 3.0)
        candidates = centers[idx] + direction * r[:, None]
        multiplicity = (
            np.linalg.norm(candidates[:, None, :] - centers[None, :, :], axis=2)
            <= radius
        ).sum(axis=1)
        keep = rng.random(need) < 1.0 / multiplicity
        accepted = candidates[keep]
        out[have : have + len(accepted)] = accepted
        have += len(accepted)
    return out


def make_training_points(
    mesh: TriMesh,
    joints: JointSet,
    counts: tuple[int, int, int],
    sigma: float,
    radius: float,
    seed: int,
) -> SampleSet:
    """Concatenate the three strategies and label against ``mesh``.

    ``counts`` gives (uniform, near-surface, joint-sphere) sample counts;
    the mesh must be watertight for the labels to be well defined.
    """
    n_uni, n_surf, n_joint = counts
    sub = np.random.default_rng(seed).integers(2**63, size=3)
    parts = []
    tags = []
    if n_uni:
        bbox = mesh.bounds(margin=0.05 * mesh.bounds().diagonal)
        parts.append(sample_uniform(bbox, n_uni, seed=sub[0]))
        tags.append(np.full(n_uni, Strategy.UNIFORM, dtype=np.uint8))
    if n_surf:
        parts.append(sample_near_surface(mesh, n_surf, sigma, seed=sub[1]))
        tags.append(np.full(n_surf, Strategy.DENSE_SURFACE, dtype=np.uint8))
    if n_joint:
        parts.append(sample_joint_spheres(joints, radius, n_joint, seed=sub[2]))
        tags.append(np.full(n_joint, Strategy.JOINT_SPHERE, dtype=np.uint8))
    points = np.concatenate(parts) if parts else np.zeros((0, 3))
    # snap to f32 before labelling: the on-disk sample format stores f32
    # points, and labels must hold exactly at the stored coordinates
    points = points.astype(np.float32).astype(np.float64)
    strategies = np.concatenate(tags) if tags else np.zeros(0, dtype=np.uint8)
    labels = surface_index(mesh).contains(points).astype(np.uint8)
    return SampleSet(points, labels, strategies)


def render_heatmaps(joints2d: np.ndarray, height: int, width: int, sigma_px: float) -> np.ndarray:
    """Per-joint Gaussian bump rasters, (H, W, J) in [0, 1].

    Channel ``j`` holds ``exp(-|pixel - joint_j|^2 / (2 sigma_px^2))`` sampled
    at integer pixel coordinates; joints outside the frame give a zero channel.
    """
    if height <= 0 or width <= 0:
        raise ValueError("raster dimensions must be positive")
    joints2d = np.asarray(joints2d, dtype=np.float64).reshape(-1, 2)
    ys, xs = np.mgrid[0:height, 0:width]
    maps = np.zeros((height, width, len(joints2d)))
    inv = 1.0 / (2.0 * sigma_px * sigma_px)
    for j, (u, v) in enumerate(joints2d):
        if not (0 <= u < width and 0 <= v < height):
            continue
        maps[:, :, j] = np.exp(-((xs - u) ** 2 + (ys - v) ** 2) * inv)
    return maps


def displacement_ground_truth(smooth: TriMesh, gt: TriMesh, clamp: float) -> np.ndarray:
    """Signed offset along each smooth-mesh normal to the nearest gt surface.

    Positive values point outward (along the normal).  Vertices whose normal
    line misses the gt surface within ``clamp`` fall back to the projection of
    the nearest-point offset onto the normal, clamped to ``[-clamp, clamp]``.
    """
    if smooth.normals is None:
        raise MeshError("smooth mesh must carry vertex normals")
    index = surface_index(gt)
    t = index.line_nearest_hit(smooth.vertices, smooth.normals, clamp)
    miss = np.isnan(t)
    if np.any(miss):
        nearest, _, _ = index.nearest(smooth.vertices[miss])
        proj = np.einsum(
            "ij,ij->i", nearest - smooth.vertices[miss], smooth.normals[miss]
        )
        t[miss] = np.clip(proj, -clamp, clamp)
    return t
