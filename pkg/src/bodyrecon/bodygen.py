"""Procedural articulated capsule bodies: the desk-scale ground-truth source.

A body is a union of capsules hung on a 17-joint kinematic tree, meshed by
extracting the zero level of its analytic distance field.  "Clothing" is a
smooth low-frequency radial modulation of the field over the torso and legs,
which Laplacian smoothing removes -- giving the displacement network real
signal to learn.

Canonical frame: +y up, +x the body's left, +z toward the camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BodySpecError, CameraFrameError
from .extraction import marching_cubes, mise_extract
from .mesh import Aabb, TriMesh
from .sampling import JOINT_NAMES, JointSet
from .spatial import surface_index

# joint-angle limits, radians; order: (lo, hi)
ANGLE_LIMITS = {
    "spine_pitch": (-0.3, 1.1),
    "left_shoulder_elev": (-0.35, 1.45),
    "right_shoulder_elev": (-0.35, 1.45),
    "left_shoulder_swing": (-0.5, 1.35),
    "right_shoulder_swing": (-0.5, 1.35),
    "left_elbow": (0.0, 2.3),
    "right_elbow": (0.0, 2.3),
    "left_hip_abduct": (-0.15, 0.7),
    "right_hip_abduct": (-0.15, 0.7),
    "left_hip_swing": (-0.5, 1.1),
    "right_hip_swing": (-0.5, 1.1),
    "left_knee": (0.0, 2.0),
    "right_knee": (0.0, 2.0),
}


@dataclass
class BodySpec:
    """Shape, pose and clothing parameters of one synthetic body."""

    torso_length: float = 0.55
    torso_radius: float = 0.13
    neck_length: float = 0.09
    head_radius: float = 0.10
    shoulder_width: float = 0.40
    upper_arm: float = 0.26
    forearm: float = 0.24
    arm_radius: float = 0.045
    hip_width: float = 0.30
    thigh: float = 0.38
    shin: float = 0.36
    leg_radius: float = 0.065
    joint_angles: dict[str, float] = field(default_factory=dict)
    clothing_amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("torso_length", "torso_radius", "neck_length", "head_radius",
                     "shoulder_width", "upper_arm", "forearm", "arm_radius",
                     "hip_width", "thigh", "shin", "leg_radius"):
            if getattr(self, name) <= 0:
                raise BodySpecError(f"{name} must be positive")
        if self.clothing_amplitude < 0:
            raise BodySpecError("clothing_amplitude must be >= 0")
        for name, value in self.joint_angles.items():
            if name not in ANGLE_LIMITS:
                raise BodySpecError(f"unknown joint angle {name!r}")
            lo, hi = ANGLE_LIMITS[name]
            if not lo <= value <= hi:
                raise BodySpecError(
                    f"{name}={value:.3f} outside limits [{lo}, {hi}]"
                )

    def angle(self, name: str) -> float:
        return self.joint_angles.get(name, 0.0)


def _rot_x(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_z(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def body_joints(spec: BodySpec) -> JointSet:
    """Forward kinematics: 17 joint positions in the canonical frame."""
    down = np.array([0.0, -1.0, 0.0])
    pitch = _rot_x(-spec.angle("spine_pitch"))  # positive pitch leans forward

    j: dict[str, np.ndarray] = {}
    j["pelvis"] = np.zeros(3)
    j["spine"] = pitch @ np.array([0.0, 0.45 * spec.torso_length, 0.0])
    j["neck"] = pitch @ np.array([0.0, spec.torso_length, 0.0])
    j["head"] = j["neck"] + pitch @ np.array(
        [0.0, spec.neck_length + spec.head_radius, 0.0]
    )
    j["nose"] = j["head"] + pitch @ np.array([0.0, 0.0, 0.95 * spec.head_radius])

    for side, sign in (("left", 1.0), ("right", -1.0)):
        shoulder = j["neck"] + pitch @ np.array(
            [sign * spec.shoulder_width / 2, -0.02, 0.0]
        )
        j[f"{side}_shoulder"] = shoulder
        elev = _rot_z(sign * spec.angle(f"{side}_shoulder_elev"))
        swing = spec.angle(f"{side}_shoulder_swing")
        upper_dir = pitch @ elev @ _rot_x(-swing) @ down
        j[f"{side}_elbow"] = shoulder + spec.upper_arm * upper_dir
        fore_dir = pitch @ elev @ _rot_x(-(swing + spec.angle(f"{side}_elbow"))) @ down
        j[f"{side}_wrist"] = j[f"{side}_elbow"] + spec.forearm * fore_dir

        # hip joints sit below the pelvis marker; the three points span the
        # plane used by pose normalization
        hip = np.array([sign * spec.hip_width / 2, -0.12 * spec.torso_length, 0.0])
        j[f"{side}_hip"] = hip
        abduct = _rot_z(sign * spec.angle(f"{side}_hip_abduct"))
        hswing = spec.angle(f"{side}_hip_swing")
        thigh_dir = abduct @ _rot_x(-hswing) @ down
        j[f"{side}_knee"] = hip + spec.thigh * thigh_dir
        shin_dir = abduct @ _rot_x(-(hswing - spec.angle(f"{side}_knee"))) @ down
        j[f"{side}_ankle"] = j[f"{side}_knee"] + spec.shin * shin_dir

    return JointSet(np.stack([j[name] for name in JOINT_NAMES]))


def _capsules(spec: BodySpec, joints: JointSet):
    """(p0, p1, radius) segments; (torso + legs, rest) split for clothing."""
    g = joints.position
    clothed = [
        (g("pelvis"), g("spine"), spec.torso_radius * 1.05),
        (g("spine"), g("neck"), spec.torso_radius * 0.92),
        (g("left_hip"), g("right_hip"), spec.torso_radius * 0.85),
        (g("left_hip"), g("left_knee"), spec.leg_radius),
        (g("right_hip"), g("right_knee"), spec.leg_radius),
        (g("left_knee"), g("left_ankle"), spec.leg_radius * 0.85),
        (g("right_knee"), g("right_ankle"), spec.leg_radius * 0.85),
    ]
    foot = np.array([0.0, -0.4 * spec.leg_radius, 1.6 * spec.leg_radius])
    bare = [
        (g("neck"), g("head"), spec.arm_radius * 1.2),
        (g("head"), g("head"), spec.head_radius),
        (g("nose"), g("nose"), 0.28 * spec.head_radius),
        (g("left_shoulder"), g("right_shoulder"), spec.arm_radius * 1.15),
        (g("left_shoulder"), g("left_elbow"), spec.arm_radius),
        (g("right_shoulder"), g("right_elbow"), spec.arm_radius),
        (g("left_elbow"), g("left_wrist"), spec.arm_radius * 0.9),
        (g("right_elbow"), g("right_wrist"), spec.arm_radius * 0.9),
        (g("left_wrist"), g("left_wrist"), spec.arm_radius * 1.25),
        (g("right_wrist"), g("right_wrist"), spec.arm_radius * 1.25),
        (g("left_ankle"), g("left_ankle") + foot, spec.leg_radius * 0.8),
        (g("right_ankle"), g("right_ankle") + foot, spec.leg_radius * 0.8),
    ]
    return clothed, bare


def _capsule_sdf(points: np.ndarray, p0, p1, radius: float) -> np.ndarray:
    seg = p1 - p0
    denom = float(seg @ seg)
    if denom < 1e-18:
        return np.linalg.norm(points - p0, axis=1) - radius
    t = np.clip((points - p0) @ seg / denom, 0.0, 1.0)
    closest = p0 + t[:, None] * seg
    return np.linalg.norm(points - closest, axis=1) - radius


class _ClothingNoise:
    """Smooth low-frequency scalar field with values in roughly [-1, 1]."""

    def __init__(self, seed: int, scale: float, n_waves: int = 6):
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((n_waves, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        wavelength = scale * rng.uniform(0.6, 1.2, n_waves)
        self.k = dirs * (2 * np.pi / wavelength)[:, None]
        self.phase = rng.uniform(0, 2 * np.pi, n_waves)
        amp = rng.uniform(0.5, 1.0, n_waves)
        self.amp = amp / amp.sum()

    def __call__(self, points: np.ndarray) -> np.ndarray:
        waves = np.sin(points @ self.k.T + self.phase)
        return waves @ self.amp


class BodyField:
    """Analytic occupancy field of a capsule body with optional clothing."""

    def __init__(self, spec: BodySpec, joints: JointSet):
        self.clothed, self.bare = _capsules(spec, joints)
        self.noise = _ClothingNoise(spec.seed, scale=0.8 * spec.torso_length)
        self.amplitude = spec.clothing_amplitude
        band = 1.5 * spec.torso_radius
        self._inv_band = 1.0 / band
        radius_pad = max(r for _, _, r in self.clothed + self.bare)
        self.bounds = Aabb.of_points(
            np.concatenate([np.stack([p0, p1]) for p0, p1, _ in self.clothed + self.bare]),
            margin=radius_pad + self.amplitude + 0.05,
        )

    def sdf(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d_clothed = np.min(
            np.stack([_capsule_sdf(points, *c) for c in self.clothed]), axis=0
        )
        d_bare = np.min(
            np.stack([_capsule_sdf(points, *c) for c in self.bare]), axis=0
        )
        if self.amplitude > 0:
            # radial clothing detail, fading away from the torso/leg surface
            mask = np.clip(1.0 - np.abs(d_clothed) * self._inv_band, 0.0, 1.0)
            d_clothed = d_clothed - self.amplitude * mask * self.noise(points)
        return np.minimum(d_clothed, d_bare)

    def occupancy(self, cell: float):
        """Field mapping the signed distance to [0, 1] with a linear ramp one
        cell wide, so marching cubes recovers the zero level exactly."""

        def field(points: np.ndarray) -> np.ndarray:
            return np.clip(0.5 - self.sdf(points) / (2.0 * cell), 0.0, 1.0)

        return field


def _check_self_intersection(spec: BodySpec, joints: JointSet) -> None:
    """Reject poses whose arm joints sink deep into the torso."""
    torso = [
        (joints.position("pelvis"), joints.position("spine"), spec.torso_radius * 1.05),
        (joints.position("spine"), joints.position("neck"), spec.torso_radius * 0.92),
    ]
    for name in ("left_elbow", "right_elbow", "left_wrist", "right_wrist"):
        p = joints.position(name)[None]
        for p0, p1, r in torso:
            depth = -_capsule_sdf(p, p0, p1, r)[0]
            if depth > 0.5 * spec.arm_radius:
                raise BodySpecError(
                    f"{name} penetrates the torso by {depth:.3f} "
                    f"(tolerance {0.5 * spec.arm_radius:.3f})"
                )


def generate_body(spec: BodySpec, resolution: int = 64) -> tuple[TriMesh, JointSet]:
    """Mesh the body field with marching cubes; watertight by construction."""
    joints = body_joints(spec)
    _check_self_intersection(spec, joints)
    body = BodyField(spec, joints)
    cell = max(body.bounds.extent) / resolution
    initial = max(8, resolution // 4)
    # round initial resolution down to a power of two
    initial = 1 << (initial.bit_length() - 1)
    grid = mise_extract(body.occupancy(cell), body.bounds, initial, resolution, 0.5)
    mesh = marching_cubes(grid, 0.5)
    return mesh, joints


@dataclass(frozen=True)
class OrthoCamera:
    """Orthographic camera looking at the canonical frame from yaw degrees."""

    height: int = 64
    width: int = 64
    center: tuple[float, float, float] = (0.0, -0.1, 0.0)
    half_extent: float = 1.6
    yaw: float = 0.0

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        right = np.array([c, 0.0, -s])
        up = np.array([0.0, 1.0, 0.0])
        view = np.array([-s, 0.0, -c])  # looking toward the body
        return right, up, view

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points -> (u, v) pixel coordinates (v grows downward)."""
        right, up, _ = self.axes
        q = np.atleast_2d(points) - np.asarray(self.center)
        u = (q @ right / self.half_extent + 1.0) * 0.5 * (self.width - 1)
        v = (1.0 - q @ up / self.half_extent) * 0.5 * (self.height - 1)
        return np.stack([u, v], axis=1)


def project_joints(joints: JointSet, mesh: TriMesh,
                   camera: OrthoCamera) -> tuple[JointSet, np.ndarray]:
    """Project joints to pixels and rasterize the silhouette along view rays.

    Raises
    ------
    CameraFrameError
        If any mesh vertex projects outside the image.
    """
    uv_mesh = camera.project(mesh.vertices)
    if (uv_mesh.min() < 0 or uv_mesh[:, 0].max() > camera.width - 1
            or uv_mesh[:, 1].max() > camera.height - 1):
        raise CameraFrameError("body projects outside the camera frame")

    joints2d = camera.project(joints.joints3d)

    right, up, view = camera.axes
    he = camera.half_extent
    ys, xs = np.mgrid[0 : camera.height, 0 : camera.width]
    u_world = (xs / (camera.width - 1) * 2.0 - 1.0) * he
    v_world = (1.0 - ys / (camera.height - 1) * 2.0) * he
    back = mesh.bounds().diagonal + he
    origins = (
        np.asarray(camera.center)
        + u_world.reshape(-1, 1) * right
        + v_world.reshape(-1, 1) * up
        - back * view
    )
    dirs = np.broadcast_to(view, origins.shape).copy()
    hits = surface_index(mesh).any_hit(origins, dirs)
    silhouette = hits.reshape(camera.height, camera.width).astype(np.float64)
    return JointSet(joints.joints3d, joints2d), silhouette


def normalize_pose(mesh: TriMesh, joints: JointSet) -> tuple[TriMesh, JointSet]:
    """Rigidly map the body to the canonical hip frame and scale hips to 1.

    The pelvis lands at the origin, the hip-to-hip axis along +x (left hip on
    the positive side), the hip-plane normal toward +z, and the hip distance
    becomes exactly 1.
    """
    pelvis = joints.position("pelvis")
    lhip = joints.position("left_hip")
    rhip = joints.position("right_hip")

    across = lhip - rhip
    width = np.linalg.norm(across)
    if width < 1e-12:
        raise BodySpecError("hip joints coincide; normalization frame undefined")
    x_axis = across / width
    normal = np.cross(rhip - pelvis, lhip - pelvis)
    norm_len = np.linalg.norm(normal)
    if norm_len < 1e-12:
        raise BodySpecError("pelvis and hips are collinear; frame undefined")
    z_axis = normal - (normal @ x_axis) * x_axis
    z_axis /= np.linalg.norm(z_axis)
    y_axis = np.cross(z_axis, x_axis)
    rot = np.stack([x_axis, y_axis, z_axis])
    scale = 1.0 / width

    def apply(points: np.ndarray) -> np.ndarray:
        return scale * (points - pelvis) @ rot.T

    new_mesh = TriMesh(apply(mesh.vertices), mesh.faces.copy())
    new_joints = JointSet(apply(joints.joints3d))
    return new_mesh, new_joints


def random_body_spec(rng: np.random.Generator, clothing_amplitude: float = 0.04,
                     pose_scale: float = 1.0) -> BodySpec:
    """Draw a body with jittered proportions and a varied, legal pose.

    Arm poses mix three regimes: hanging/raised in the frontal plane, swung
    forward across the torso (self-occluding from the frontal view), and
    crouches with bent knees and pitched spine.
    """
    def jitter(base: float, frac: float = 0.12) -> float:
        return base * float(rng.uniform(1 - frac, 1 + frac))

    angles: dict[str, float] = {}

    def draw(name: str, lo: float, hi: float) -> None:
        lo_lim, hi_lim = ANGLE_LIMITS[name]
        angles[name] = float(np.clip(rng.uniform(lo, hi) * pose_scale, lo_lim, hi_lim))

    crouch = rng.random() < 0.3
    if crouch:
        draw("spine_pitch", 0.4, 1.0)
        for side in ("left", "right"):
            draw(f"{side}_hip_swing", 0.5, 1.1)
            draw(f"{side}_knee", 0.8, 1.9)
    else:
        draw("spine_pitch", -0.2, 0.35)
        for side in ("left", "right"):
            draw(f"{side}_hip_swing", -0.3, 0.5)
            draw(f"{side}_knee", 0.0, 0.7)

    for side in ("left", "right"):
        draw(f"{side}_hip_abduct", 0.03, 0.45)
        regime = rng.random()
        if regime < 0.4:   # self-occluding: arm swung in front of the torso
            draw(f"{side}_shoulder_elev", -0.2, 0.35)
            draw(f"{side}_shoulder_swing", 0.55, 1.3)
            draw(f"{side}_elbow", 0.4, 1.6)
        elif regime < 0.75:  # frontal-plane raise
            draw(f"{side}_shoulder_elev", 0.35, 1.4)
            draw(f"{side}_shoulder_swing", -0.15, 0.25)
            draw(f"{side}_elbow", 0.0, 1.0)
        else:               # hanging, mild motion
            draw(f"{side}_shoulder_elev", 0.05, 0.5)
            draw(f"{side}_shoulder_swing", -0.3, 0.3)
            draw(f"{side}_elbow", 0.0, 0.6)

    return BodySpec(
        torso_length=jitter(0.55),
        torso_radius=jitter(0.13),
        neck_length=jitter(0.09),
        head_radius=jitter(0.10, 0.08),
        shoulder_width=jitter(0.40),
        upper_arm=jitter(0.26),
        forearm=jitter(0.24),
        arm_radius=jitter(0.045, 0.15),
        hip_width=jitter(0.30, 0.08),
        thigh=jitter(0.38),
        shin=jitter(0.36),
        leg_radius=jitter(0.065, 0.15),
        joint_angles=angles,
        clothing_amplitude=clothing_amplitude,
        seed=int(rng.integers(2**31)),
    )


def sample_legal_body(rng: np.random.Generator, clothing_amplitude: float,
                      max_tries: int = 50) -> BodySpec:
    """Rejection-sample a spec whose pose passes the self-intersection check."""
    for _ in range(max_tries):
        spec = random_body_spec(rng, clothing_amplitude)
        try:
            _check_self_intersection(spec, body_joints(spec))
        except BodySpecError:
            continue
        return spec
    raise BodySpecError(f"no valid pose found in {max_tries} draws")
