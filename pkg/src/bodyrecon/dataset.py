"""On-disk dataset: one directory per item plus a split manifest.

Item layout::

    item_0000/
        mesh.obj         detailed ground-truth body (with clothing)
        mesh_smooth.obj  Laplacian-smoothed pseudo ground truth
        joints.txt       17 lines: name x y z u v
        rasters.pgm      binary PGM stack: silhouette, then one map per joint
        samples.bin      u32 count, then records of 3*f32 point, u8 label,
                         u8 strategy (little-endian)

The manifest lists ``name seed split`` per item.  Everything is derived
deterministically from the dataset seed, so rebuilding with the same seed
reproduces every byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .bodygen import OrthoCamera, generate_body, normalize_pose, project_joints, sample_legal_body
from .mesh import TriMesh, laplacian_smooth, load_obj, save_obj
from .sampling import (
    JOINT_NAMES,
    JointSet,
    Observation,
    SampleSet,
    make_training_points,
    render_heatmaps,
)

# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def write_pgm_stack(path: str | Path, channels: np.ndarray) -> None:
    """Write an (H, W, C) float array in [0, 1] as C concatenated P5 frames."""
    h, w, c = channels.shape
    data = np.clip(np.round(channels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        for i in range(c):
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(data[:, :, i].tobytes())


def read_pgm_stack(path: str | Path) -> np.ndarray:
    """Read a concatenated P5 stack back to (H, W, C) floats in [0, 1]."""
    frames = []
    with open(path, "rb") as fh:
        while True:
            magic = fh.readline().strip()
            if not magic:
                break
            if magic != b"P5":
                raise ValueError(f"{path}: expected P5 frame, got {magic!r}")
            w, h = map(int, fh.readline().split())
            maxval = int(fh.readline())
            raw = fh.read(w * h)
            frames.append(
                np.frombuffer(raw, dtype=np.uint8).reshape(h, w) / maxval
            )
    if not frames:
        raise ValueError(f"{path}: empty raster stack")
    return np.stack(frames, axis=2)


def write_samples(path: str | Path, samples: SampleSet) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(samples)))
        record = np.zeros(
            len(samples),
            dtype=[("point", "<f4", 3), ("label", "u1"), ("strategy", "u1")],
        )
        record["point"] = samples.points.astype("<f4")
        record["label"] = samples.labels
        record["strategy"] = samples.strategies
        fh.write(record.tobytes())


def read_samples(path: str | Path) -> SampleSet:
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<I", fh.read(4))
        record = np.frombuffer(
            fh.read(),
            dtype=[("point", "<f4", 3), ("label", "u1"), ("strategy", "u1")],
        )
    if len(record) != count:
        raise ValueError(f"{path}: expected {count} records, found {len(record)}")
    return SampleSet(
        record["point"].astype(np.float64), record["label"], record["strategy"]
    )


def write_joints(path: str | Path, joints: JointSet) -> None:
    if joints.joints2d is None:
        raise ValueError("dataset joints require 2D projections")
    with open(path, "w", encoding="ascii") as fh:
        for name, p3, p2 in zip(JOINT_NAMES, joints.joints3d.tolist(),
                                joints.joints2d.tolist()):
            fh.write(f"{name} {p3[0]!r} {p3[1]!r} {p3[2]!r} {p2[0]!r} {p2[1]!r}\n")


def read_joints(path: str | Path) -> JointSet:
    j3, j2 = [], []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            name, x, y, z, u, v = parts
            if name != JOINT_NAMES[len(j3)]:
                raise ValueError(f"{path}: joint order mismatch at {name!r}")
            j3.append([float(x), float(y), float(z)])
            j2.append([float(u), float(v)])
    return JointSet(np.array(j3), np.array(j2))


# ---------------------------------------------------------------------------
# items and manifest
# ---------------------------------------------------------------------------


@dataclass
class DatasetItem:
    """Lazy handle to one stored sample directory."""

    directory: Path
    seed: int
    split: str

    @property
    def name(self) -> str:
        return self.directory.name

    @cached_property
    def gt_mesh(self) -> TriMesh:
        return load_obj(self.directory / "mesh.obj")

    @cached_property
    def smooth_mesh(self) -> TriMesh:
        return load_obj(self.directory / "mesh_smooth.obj")

    @cached_property
    def joints(self) -> JointSet:
        return read_joints(self.directory / "joints.txt")

    @cached_property
    def samples(self) -> SampleSet:
        return read_samples(self.directory / "samples.bin")

    @cached_property
    def observation(self) -> Observation:
        stack = read_pgm_stack(self.directory / "rasters.pgm")
        return Observation(
            silhouette=stack[:, :, 0],
            heatmaps=stack[:, :, 1:],
            joints2d=self.joints.joints2d,
        )


def write_manifest(path: str | Path, items: list[DatasetItem]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# bodyrecon dataset: name seed split\n")
        for item in items:
            fh.write(f"{item.name} {item.seed} {item.split}\n")


def read_manifest(path: str | Path) -> list[DatasetItem]:
    path = Path(path)
    items = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            name, seed, split = line.split()
            items.append(DatasetItem(path.parent / name, int(seed), split))
    return items


def split_items(items: list[DatasetItem], split: str) -> list[DatasetItem]:
    return [it for it in items if it.split == split]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@dataclass
class GenParams:
    """Everything that shapes generated items (see config for CLI defaults)."""

    n_train: int = 64
    n_val: int = 0
    n_test: int = 16
    body_resolution: int = 64
    image_size: int = 64
    heatmap_sigma_px: float = 2.0
    camera_half_extent: float = 3.6
    camera_center_y: float = 0.1
    camera_views: int = 1
    clothing_amplitude: float = 0.05
    smooth_iterations: int = 30
    smooth_lambda: float = 0.5
    k_points: int = 2048
    uniform_frac: float = 0.25
    surface_frac: float = 0.5
    near_surface_sigma_frac: float = 0.025
    joint_radius: float = 0.35

    @property
    def n_items(self) -> int:
        return self.n_train + self.n_val + self.n_test

    def counts(self) -> tuple[int, int, int]:
        n_uni = int(round(self.k_points * self.uniform_frac))
        n_surf = int(round(self.k_points * self.surface_frac))
        return n_uni, n_surf, self.k_points - n_uni - n_surf

    def camera(self, index: int) -> OrthoCamera:
        yaw = 2.0 * np.pi * (index % self.camera_views) / self.camera_views
        return OrthoCamera(
            height=self.image_size,
            width=self.image_size,
            center=(0.0, self.camera_center_y, 0.0),
            half_extent=self.camera_half_extent,
            yaw=yaw,
        )


def item_seed(dataset_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([dataset_seed, index]).generate_state(1)[0])


def generate_item(directory: Path, seed: int, camera: OrthoCamera,
                  params: GenParams) -> None:
    """Generate and store one body: meshes, joints, rasters, labelled samples."""
    rng = np.random.default_rng(seed)
    spec = sample_legal_body(rng, params.clothing_amplitude)
    mesh, joints = generate_body(spec, params.body_resolution)
    mesh, joints = normalize_pose(mesh, joints)
    joints, silhouette = project_joints(joints, mesh, camera)
    heatmaps = render_heatmaps(
        joints.joints2d, params.image_size, params.image_size,
        params.heatmap_sigma_px,
    )
    smooth = laplacian_smooth(mesh, params.smooth_iterations, params.smooth_lambda)

    sigma = params.near_surface_sigma_frac * smooth.bounds().diagonal
    samples = make_training_points(
        smooth, joints, params.counts(), sigma, params.joint_radius,
        seed=int(rng.integers(2**63)),
    )
    directory.mkdir(parents=True, exist_ok=True)
    save_obj(mesh, directory / "mesh.obj")
    save_obj(smooth, directory / "mesh_smooth.obj")
    write_joints(directory / "joints.txt", joints)
    write_pgm_stack(
        directory / "rasters.pgm",
        np.concatenate([silhouette[:, :, None], heatmaps], axis=2),
    )
    write_samples(directory / "samples.bin", samples)


def build_dataset(out_dir: str | Path, seed: int, params: GenParams) -> Path:
    """Generate ``params.n_items`` bodies under ``out_dir``; returns manifest path.

    Items are seeded individually from (seed, index), so any subset is
    reproducible independently of the rest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = (
        ["train"] * params.n_train + ["val"] * params.n_val + ["test"] * params.n_test
    )
    items = []
    for index, split in enumerate(splits):
        directory = out_dir / f"item_{index:04d}"
        iseed = item_seed(seed, index)
        generate_item(directory, iseed, params.camera(index), params)
        items.append(DatasetItem(directory, iseed, split))
    manifest = out_dir / "manifest.txt"
    write_manifest(manifest, items)
    return manifest
