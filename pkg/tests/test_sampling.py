import numpy as np
import pytest

from bodyrecon.mesh import Aabb, TriMesh
from bodyrecon.metrics import chamfer
from bodyrecon.sampling import (
    JOINT_NAMES,
    JointSet,
    Observation,
    SampleSet,
    Strategy,
    displacement_ground_truth,
    make_training_points,
    render_heatmaps,
    sample_joint_spheres,
    sample_near_surface,
    sample_uniform,
)
from bodyrecon.spatial import contains, nearest_on_surface

from conftest import make_icosphere, ray_parity_contains


def dummy_joints(scale=1.0):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-scale, scale, size=(len(JOINT_NAMES), 3))
    return JointSet(pts)


class TestSampleUniform:
    def test_degenerate_box_collapses(self):
        bbox = Aabb((1, 2, 3), (1, 2, 3))
        points = sample_uniform(bbox, 10, seed=0)
        assert np.allclose(points, [1, 2, 3])

    def test_unit_cube_mean(self):
        points = sample_uniform(Aabb((0, 0, 0), (1, 1, 1)), 100_000, seed=1)
        assert np.abs(points.mean(axis=0) - 0.5).max() < 0.01

    def test_deterministic(self):
        bbox = Aabb((-1, -1, -1), (2, 2, 2))
        assert np.array_equal(sample_uniform(bbox, 100, 7),
                              sample_uniform(bbox, 100, 7))


class TestSampleNearSurface:
    def test_zero_sigma_lies_on_surface(self, icosphere):
        points = sample_near_surface(icosphere, 200, sigma=0.0, seed=2)
        _, dist, _ = nearest_on_surface(icosphere, points)
        assert dist.max() < 1e-9

    def test_half_normal_mean_distance(self):
        sphere = make_icosphere(radius=1.0, subdivisions=3)
        sigma = 0.05
        points = sample_near_surface(sphere, 10_000, sigma=sigma, seed=3)
        # |N(0, sigma^2)| has mean sigma*sqrt(2/pi); the distance to the
        # sphere along the normal dominates for small sigma
        dist = np.abs(np.linalg.norm(points, axis=1) - 1.0)
        expected = sigma * np.sqrt(2.0 / np.pi)
        assert dist.mean() == pytest.approx(expected, rel=0.05)

    def test_labels_roughly_balanced(self):
        sphere = make_icosphere(radius=1.0, subdivisions=3)
        points = sample_near_surface(sphere, 4000, sigma=0.05, seed=4)
        inside = contains(sphere, points)
        assert inside.mean() == pytest.approx(0.5, abs=0.05)


class TestSampleJointSpheres:
    def test_all_points_within_radius_of_focus_joint(self):
        joints = dummy_joints()
        radius = 0.3
        points = sample_joint_spheres(joints, radius, 500, seed=5)
        centers = np.stack([joints.position(n)
                            for n in ("head", "nose", "left_wrist", "right_wrist")])
        dists = np.linalg.norm(points[:, None, :] - centers[None], axis=2)
        assert np.all(dists.min(axis=1) <= radius + 1e-12)

    def test_zero_count(self):
        assert len(sample_joint_spheres(dummy_joints(), 0.3, 0, seed=0)) == 0

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError, match="radius"):
            sample_joint_spheres(dummy_joints(), 0.0, 10, seed=0)

    def test_inside_fraction_beats_uniform(self, icosphere):
        # spheres centered on joints placed on the body surface hit the
        # interior far more often than box-uniform samples
        names = {n: i for i, n in enumerate(JOINT_NAMES)}
        pts = np.zeros((len(JOINT_NAMES), 3))
        pts[names["head"]] = [0, 0, 0.9]
        pts[names["nose"]] = [0, 0.2, 0.9]
        pts[names["left_wrist"]] = [0.9, 0, 0]
        pts[names["right_wrist"]] = [-0.9, 0, 0]
        joints = JointSet(pts)
        sphere_pts = sample_joint_spheres(joints, 0.25, 2000, seed=6)
        uniform_pts = sample_uniform(icosphere.bounds(margin=0.2), 2000, seed=6)
        frac_spheres = contains(icosphere, sphere_pts).mean()
        frac_uniform = contains(icosphere, uniform_pts).mean()
        assert frac_spheres > frac_uniform


class TestMakeTrainingPoints:
    def test_total_and_composition(self, icosphere):
        joints = dummy_joints()
        out = make_training_points(icosphere, joints, (512, 1024, 512),
                                   sigma=0.05, radius=0.3, seed=7)
        assert len(out) == 2048
        strategies = out.strategies
        assert np.count_nonzero(strategies == Strategy.UNIFORM) == 512
        assert np.count_nonzero(strategies == Strategy.DENSE_SURFACE) == 1024
        assert np.count_nonzero(strategies == Strategy.JOINT_SPHERE) == 512

    def test_all_uniform_reduces_to_uniform_sampling(self, icosphere):
        out = make_training_points(icosphere, dummy_joints(), (256, 0, 0),
                                   sigma=0.05, radius=0.3, seed=8)
        assert np.all(out.strategies == Strategy.UNIFORM)
        bbox = icosphere.bounds(margin=0.05 * icosphere.bounds().diagonal)
        assert np.all(bbox.contains(out.points))

    def test_labels_match_ray_parity_oracle(self, icosphere):
        out = make_training_points(icosphere, dummy_joints(), (200, 400, 200),
                                   sigma=0.05, radius=0.3, seed=9)
        oracle = ray_parity_contains(icosphere, out.points, seed=11)
        assert np.array_equal(out.labels.astype(bool), oracle)

    def test_sample_set_indexing(self, icosphere):
        out = make_training_points(icosphere, dummy_joints(), (10, 10, 10),
                                   sigma=0.05, radius=0.3, seed=10)
        sample = out[5]
        assert sample.point.shape == (3,)
        assert isinstance(sample.label, bool)
        assert isinstance(sample.strategy, Strategy)


class TestRenderHeatmaps:
    def test_joint_on_pixel_gives_one(self):
        maps = render_heatmaps(np.array([[10.0, 12.0]]), 64, 64, sigma_px=2.0)
        assert maps[12, 10, 0] == 1.0
        assert maps.max() == 1.0

    def test_value_at_one_sigma(self):
        maps = render_heatmaps(np.array([[20.0, 20.0]]), 64, 64, sigma_px=3.0)
        assert maps[20, 23, 0] == pytest.approx(np.exp(-0.5))

    def test_channel_sum_matches_gaussian_integral(self):
        sigma = 2.0
        maps = render_heatmaps(np.array([[32.0, 32.0]]), 64, 64, sigma_px=sigma)
        assert maps[:, :, 0].sum() == pytest.approx(2 * np.pi * sigma**2, rel=0.02)

    def test_out_of_frame_joint_gives_zero_channel(self):
        maps = render_heatmaps(np.array([[-5.0, 10.0], [10.0, 10.0]]), 32, 32, 2.0)
        assert np.all(maps[:, :, 0] == 0.0)
        assert maps[:, :, 1].max() == 1.0

    def test_translation_equivariance(self):
        a = render_heatmaps(np.array([[20.0, 24.0]]), 64, 64, 2.0)
        b = render_heatmaps(np.array([[27.0, 21.0]]), 64, 64, 2.0)
        # shift channel a by (+7, -3): interior region must match exactly
        shifted = np.roll(np.roll(a[:, :, 0], -3, axis=0), 7, axis=1)
        assert np.abs(shifted[8:-8, 8:-8] - b[8:-8, 8:-8, 0]).max() < 1e-12


class TestObservation:
    def test_raster_stacking(self):
        sil = np.zeros((8, 8))
        maps = np.ones((8, 8, 3)) * 0.5
        obs = Observation(sil, maps)
        assert obs.raster(use_joints=True).shape == (8, 8, 4)
        assert obs.raster(use_joints=False).shape == (8, 8, 1)

    def test_rejects_mismatched_dims(self):
        with pytest.raises(ValueError, match="match"):
            Observation(np.zeros((8, 8)), np.zeros((4, 4, 3)))


class TestDisplacementGroundTruth:
    def test_identical_meshes_give_zero(self, icosphere):
        mesh = icosphere.with_normals()
        d = displacement_ground_truth(mesh, icosphere, clamp=0.5)
        assert np.abs(d).max() < 1e-9

    def test_concentric_spheres(self):
        inner = make_icosphere(radius=1.0, subdivisions=3)
        radial = inner.vertices / np.linalg.norm(inner.vertices, axis=1, keepdims=True)
        smooth = TriMesh(inner.vertices, inner.faces, normals=radial)
        outer = TriMesh(inner.vertices * 1.1, inner.faces)
        d = displacement_ground_truth(smooth, outer, clamp=0.5)
        # facet sagitta of the outer sphere bounds the deviation from +0.1
        assert d.mean() == pytest.approx(0.1, abs=0.01)
        assert np.all(d > 0)

    def test_clamped_magnitude(self, icosphere):
        smooth = icosphere.with_normals()
        rng = np.random.default_rng(0)
        far = TriMesh(icosphere.vertices * 3.0 + rng.standard_normal(3),
                      icosphere.faces)
        clamp = 0.15
        d = displacement_ground_truth(smooth, far, clamp=clamp)
        assert np.all(np.abs(d) <= clamp + 1e-12)

    def test_applying_displacements_reduces_chamfer(self):
        base = make_icosphere(radius=1.0, subdivisions=3)
        rng = np.random.default_rng(5)
        bump = 1.0 + 0.06 * np.sin(3 * base.vertices[:, 0]) \
            + 0.02 * rng.standard_normal(base.n_vertices)
        detailed = TriMesh(base.vertices * bump[:, None], base.faces)
        radial = base.vertices / np.linalg.norm(base.vertices, axis=1, keepdims=True)
        smooth = TriMesh(base.vertices, base.faces, normals=radial)

        from bodyrecon.extraction import apply_displacements

        d = displacement_ground_truth(smooth, detailed, clamp=0.3)
        refined = apply_displacements(smooth, d)
        before = chamfer(smooth, detailed, n=20_000, seed=1)
        after = chamfer(refined, detailed, n=20_000, seed=1)
        assert after < before

    def test_requires_normals(self, icosphere):
        with pytest.raises(Exception, match="normals"):
            displacement_ground_truth(icosphere, icosphere, clamp=0.5)
