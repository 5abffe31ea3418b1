"""Mesh evaluation metrics: volumetric IoU, Chamfer, normal consistency, P2S.

All four are Monte-Carlo estimates over surface or volume samples.  Sampling
seeds are derived from the base seed and each mesh's content hash, so a
metric is exactly symmetric in its arguments and reruns are reproducible
without any global state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import MeshError
from .mesh import TriMesh, sample_surface
from .spatial import surface_index


def _mix_seed(*values: int) -> int:
    h = hashlib.blake2b(digest_size=8)
    for v in values:
        h.update(int(v).to_bytes(16, "little", signed=False))
    return int.from_bytes(h.digest(), "little") % 2**63


@dataclass
class MetricsReport:
    """The four metrics for one predicted/ground-truth mesh pair."""

    iou: float
    chamfer: float
    normal_consistency: float
    p2s: float
    n_samples: int
    seed: int

    def __post_init__(self):
        values = (self.iou, self.chamfer, self.normal_consistency, self.p2s)
        if not all(np.isfinite(v) for v in values):
            raise ValueError("metrics must be finite")
        if not 0.0 <= self.iou <= 1.0:
            raise ValueError(f"iou {self.iou} outside [0, 1]")
        if not 0.0 <= self.normal_consistency <= 1.0:
            raise ValueError(f"normal consistency {self.normal_consistency} outside [0, 1]")

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="ascii")


def volumetric_iou(a: TriMesh, b: TriMesh, n: int = 100_000, seed: int = 0) -> float:
    """Monte-Carlo intersection-over-union of two watertight meshes.

    Points are drawn uniformly in the joint bounding box; the estimate and
    the sample set are symmetric in (a, b).
    """
    bbox = a.bounds().union(b.bounds())
    pair_seed = _mix_seed(seed, a.content_hash() ^ b.content_hash())
    rng = np.random.default_rng(pair_seed)
    points = rng.uniform(size=(n, 3)) * bbox.extent + bbox.lo
    in_a = surface_index(a).contains(points)
    in_b = surface_index(b).contains(points)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        raise MeshError("no samples hit either mesh; meshes disjoint from sample space")
    return float(np.count_nonzero(in_a & in_b) / union)


def _directed_mean_distance(points: np.ndarray, target: TriMesh) -> float:
    _, dist, _ = surface_index(target).nearest(points)
    return float(dist.mean())


def chamfer(a: TriMesh, b: TriMesh, n: int = 100_000, seed: int = 0) -> float:
    """Symmetric Chamfer distance: mean Euclidean nearest-surface distance,
    averaged over both directions, from ``n`` surface samples per mesh."""
    pa, _, _ = sample_surface(a, n, seed=_mix_seed(seed, a.content_hash()))
    pb, _, _ = sample_surface(b, n, seed=_mix_seed(seed, b.content_hash()))
    return 0.5 * (
        _directed_mean_distance(pa, b) + _directed_mean_distance(pb, a)
    )


def _directed_normal_agreement(source: TriMesh, target: TriMesh, n: int,
                               seed: int) -> float:
    points, face_ids, _ = sample_surface(source, n, seed=seed)
    src_normals = source.face_normals()[face_ids]
    _, _, nearest_faces = surface_index(target).nearest(points)
    tgt_normals = target.face_normals()[nearest_faces]
    dots = np.abs(np.einsum("ij,ij->i", src_normals, tgt_normals))
    return float(dots.mean())


def normal_consistency(a: TriMesh, b: TriMesh, n: int = 100_000, seed: int = 0) -> float:
    """Mean absolute normal dot product at nearest-neighbor correspondences,
    symmetrized over both directions."""
    return 0.5 * (
        _directed_normal_agreement(a, b, n, _mix_seed(seed, a.content_hash()))
        + _directed_normal_agreement(b, a, n, _mix_seed(seed, b.content_hash()))
    )


def point_to_surface(pred: TriMesh, gt: TriMesh, n: int = 100_000, seed: int = 0) -> float:
    """One-directional mean distance from predicted vertices to the gt surface.

    Uses every vertex when there are at most ``n``, otherwise a seeded
    subsample of ``n`` vertices.
    """
    vertices = pred.vertices
    if len(vertices) > n:
        rng = np.random.default_rng(_mix_seed(seed, pred.content_hash()))
        vertices = vertices[rng.choice(len(vertices), size=n, replace=False)]
    return _directed_mean_distance(vertices, gt)


def evaluate_pair(pred: TriMesh, gt: TriMesh, n: int = 100_000, seed: int = 0) -> MetricsReport:
    """All four metrics for one mesh pair."""
    return MetricsReport(
        iou=volumetric_iou(pred, gt, n, seed),
        chamfer=chamfer(pred, gt, n, seed),
        normal_consistency=normal_consistency(pred, gt, n, seed),
        p2s=point_to_surface(pred, gt, n, seed),
        n_samples=n,
        seed=seed,
    )
