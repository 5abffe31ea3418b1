import numpy as np
import pytest

from bodyrecon.errors import FieldEvaluationError, MeshError, NoIsosurface
from bodyrecon.extraction import (
    OccupancyGrid,
    apply_displacements,
    marching_cubes,
    mise_extract,
)
from bodyrecon.mesh import Aabb, TriMesh, compute_vertex_normals, is_watertight

from conftest import make_icosphere

UNIT_BBOX = Aabb((0, 0, 0), (1, 1, 1))


def sphere_indicator(radius=0.3, center=0.5):
    def field(points):
        return (np.linalg.norm(points - center, axis=1) <= radius).astype(float)
    return field


def sigmoid_sphere(radius=0.35, center=0.5, sharpness=64.0):
    def field(points):
        d = np.linalg.norm(points - center, axis=1)
        return 1.0 / (1.0 + np.exp(-sharpness * (radius - d)))
    return field


def dense_grid(field, bbox, res):
    axes = [np.linspace(bbox.lo[i], bbox.hi[i], res + 1) for i in range(3)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    return OccupancyGrid(bbox, field(pts).reshape(res + 1, res + 1, res + 1))


class TestMiseExtract:
    def test_constant_field_evaluates_initial_grid_only(self):
        calls = {"n": 0}

        def field(points):
            calls["n"] += len(points)
            return np.ones(len(points))

        grid = mise_extract(field, UNIT_BBOX, 16, 128, tau=0.5)
        assert np.all(grid.values >= 0.5)
        assert calls["n"] == 17**3

    def test_classification_equals_dense_evaluation(self):
        field = sphere_indicator()
        grid = mise_extract(field, UNIT_BBOX, 16, 128, tau=0.5)
        dense = dense_grid(field, UNIT_BBOX, 128)
        assert np.array_equal(grid.values >= 0.5, dense.values >= 0.5)

    def test_evaluation_count_below_twenty_percent(self):
        calls = {"n": 0}
        inner = sphere_indicator()

        def field(points):
            calls["n"] += len(points)
            return inner(points)

        mise_extract(field, UNIT_BBOX, 16, 128, tau=0.5)
        assert calls["n"] < 0.2 * 129**3

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError, match="power of two"):
            mise_extract(sphere_indicator(), UNIT_BBOX, 12, 128, 0.5)

    def test_rejects_initial_above_final(self):
        with pytest.raises(ValueError, match="exceed"):
            mise_extract(sphere_indicator(), UNIT_BBOX, 64, 32, 0.5)

    def test_non_finite_field_aborts(self):
        def field(points):
            return np.full(len(points), np.nan)

        with pytest.raises(FieldEvaluationError, match="non-finite"):
            mise_extract(field, UNIT_BBOX, 8, 16, 0.5)


class TestMarchingCubes:
    def test_sphere_radial_accuracy(self):
        grid = dense_grid(sigmoid_sphere(), UNIT_BBOX, 64)
        mesh = marching_cubes(grid, tau=0.5)
        radii = np.linalg.norm(mesh.vertices - 0.5, axis=1)
        cell = 1.0 / 64
        assert np.abs(radii - 0.35).max() < 1.5 * cell

    def test_sphere_output_watertight(self):
        grid = dense_grid(sigmoid_sphere(), UNIT_BBOX, 64)
        mesh = marching_cubes(grid, tau=0.5)
        assert is_watertight(mesh)

    def test_all_inside_raises(self):
        grid = OccupancyGrid(UNIT_BBOX, np.ones((9, 9, 9)))
        with pytest.raises(NoIsosurface):
            marching_cubes(grid, tau=0.5)

    def test_all_outside_raises(self):
        grid = OccupancyGrid(UNIT_BBOX, np.zeros((9, 9, 9)))
        with pytest.raises(NoIsosurface):
            marching_cubes(grid, tau=0.5)

    def test_surface_touching_boundary_is_closed(self):
        # field occupied in the whole upper half: the open side must be capped
        def field(points):
            return (points[:, 2] > 0.5).astype(float)

        grid = dense_grid(field, UNIT_BBOX, 16)
        mesh = marching_cubes(grid, tau=0.5)
        assert is_watertight(mesh)

    def test_outward_orientation(self):
        grid = dense_grid(sigmoid_sphere(), UNIT_BBOX, 32)
        mesh = marching_cubes(grid, tau=0.5)
        tri = mesh.triangles() - 0.5
        volume = np.einsum("ij,ij->i", tri[:, 0],
                           np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0
        assert volume > 0

    def test_interpolation_crossing_position(self):
        # single crossing along x between nodes with values 0.2 and 0.8:
        # t = (tau - v0) / (v1 - v0)
        values = np.zeros((2, 2, 2))
        values[0] = 0.2
        values[1] = 0.8
        grid = OccupancyGrid(Aabb((0, 0, 0), (1, 1, 1)), values)
        mesh = marching_cubes(grid, tau=0.5)
        xs = mesh.vertices[:, 0]
        interior = xs[(xs > 1e-9) & (xs < 1 - 1e-9)]
        assert np.allclose(interior, 0.5)


class TestGridDump:
    def test_round_trip(self, tmp_path):
        grid = dense_grid(sigmoid_sphere(), UNIT_BBOX, 8)
        path = tmp_path / "grid.bin"
        grid.save(path)
        back = OccupancyGrid.load(path)
        assert back.resolution == grid.resolution
        assert np.array_equal(back.values, grid.values.astype(np.float32))
        assert np.allclose(back.bbox.lo, grid.bbox.lo)


class TestApplyDisplacements:
    def test_zero_displacement_is_identity(self, icosphere):
        mesh = icosphere.with_normals()
        out = apply_displacements(mesh, np.zeros(mesh.n_vertices))
        assert np.array_equal(out.vertices, mesh.vertices)
        assert np.array_equal(out.faces, mesh.faces)

    def test_uniform_radial_displacement_on_sphere(self):
        sphere = make_icosphere(radius=1.0, subdivisions=2)
        radial = sphere.vertices / np.linalg.norm(sphere.vertices, axis=1, keepdims=True)
        mesh = TriMesh(sphere.vertices, sphere.faces, normals=radial)
        out = apply_displacements(mesh, np.full(mesh.n_vertices, 0.1))
        assert np.allclose(np.linalg.norm(out.vertices, axis=1), 1.1)

    def test_round_trip_restores_vertices(self, icosphere):
        mesh = icosphere.with_normals()
        rng = np.random.default_rng(0)
        d = 0.05 * rng.standard_normal(mesh.n_vertices)
        forward = apply_displacements(mesh, d)
        back = apply_displacements(forward, -d)
        assert np.abs(back.vertices - mesh.vertices).max() < 1e-9

    def test_preserves_topology(self, icosphere):
        mesh = icosphere.with_normals()
        out = apply_displacements(mesh, np.full(mesh.n_vertices, 0.2))
        assert np.array_equal(out.faces, mesh.faces)

    def test_rejects_length_mismatch(self, icosphere):
        mesh = icosphere.with_normals()
        with pytest.raises(MeshError, match="count"):
            apply_displacements(mesh, np.zeros(3))

    def test_requires_normals(self, icosphere):
        with pytest.raises(MeshError, match="normals"):
            apply_displacements(icosphere, np.zeros(icosphere.n_vertices))


class TestEdgeSharing:
    def test_interior_surface_edges_shared_by_two_faces(self):
        grid = dense_grid(sigmoid_sphere(radius=0.3), UNIT_BBOX, 32)
        mesh = marching_cubes(grid, tau=0.5)
        he = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                             mesh.faces[:, [2, 0]]])
        key = he[:, 0] * mesh.n_vertices + he[:, 1]
        rev = he[:, 1] * mesh.n_vertices + he[:, 0]
        _, counts = np.unique(np.concatenate([key, rev]), return_counts=True)
        assert np.all(counts == 2)
