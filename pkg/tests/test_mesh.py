import numpy as np
import pytest

from bodyrecon.errors import MeshError
from bodyrecon.mesh import (
    Aabb,
    TriMesh,
    compute_vertex_normals,
    is_watertight,
    laplacian_smooth,
    load_obj,
    sample_surface,
    save_obj,
)

from conftest import make_cube, make_icosphere, make_tetrahedron


class TestTriMesh:
    def test_rejects_out_of_range_face_index(self):
        with pytest.raises(MeshError, match="out of range"):
            TriMesh(np.zeros((3, 3)), [[0, 1, 3]])

    def test_rejects_degenerate_face(self):
        with pytest.raises(MeshError, match="degenerate"):
            TriMesh(np.zeros((3, 3)), [[0, 1, 1]])

    def test_rejects_non_unit_normals(self):
        verts = np.eye(3)
        with pytest.raises(MeshError, match="unit length"):
            TriMesh(verts, [[0, 1, 2]], normals=np.full((3, 3), 0.5))

    def test_accepts_unit_normals_within_tolerance(self):
        verts = np.eye(3)
        normals = np.tile([0.0, 0.0, 1.0 + 5e-7], (3, 1))
        mesh = TriMesh(verts, [[0, 1, 2]], normals=normals)
        assert mesh.normals.shape == (3, 3)


class TestAabb:
    def test_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            Aabb((0, 0, 1), (1, 1, 0))

    def test_union_and_diagonal(self):
        a = Aabb((0, 0, 0), (1, 1, 1))
        b = Aabb((2, 0, 0), (3, 1, 1))
        u = a.union(b)
        assert np.allclose(u.lo, (0, 0, 0)) and np.allclose(u.hi, (3, 1, 1))
        assert a.diagonal == pytest.approx(np.sqrt(3))


class TestVertexNormals:
    def test_cube_corner_normals_are_diagonal(self):
        cube = make_cube()
        normals = compute_vertex_normals(cube)
        expected = np.sign(cube.vertices - 0.5) / np.sqrt(3)
        assert np.abs(normals - expected).max() < 1e-12

    def test_planar_triangle_normal(self):
        mesh = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float),
                       [[0, 1, 2]])
        normals = compute_vertex_normals(mesh)
        assert np.allclose(normals, [[0, 0, 1]] * 3)

    def test_icosphere_normals_near_radial(self):
        sphere = make_icosphere(subdivisions=3)
        normals = compute_vertex_normals(sphere)
        radial = sphere.vertices / np.linalg.norm(sphere.vertices, axis=1, keepdims=True)
        cosang = np.clip(np.einsum("ij,ij->i", normals, radial), -1, 1)
        assert np.degrees(np.arccos(cosang)).max() < 2.0

    def test_isolated_vertex_flagged(self):
        verts = np.vstack([np.eye(3), [5.0, 5.0, 5.0]])
        mesh = TriMesh(verts, [[0, 1, 2]])
        with pytest.raises(MeshError, match="no incident face"):
            compute_vertex_normals(mesh)


class TestLaplacianSmooth:
    def test_zero_iterations_is_identity(self, icosphere):
        out = laplacian_smooth(icosphere, iterations=0, lam=0.5)
        assert np.array_equal(out.vertices, icosphere.vertices)
        assert np.array_equal(out.faces, icosphere.faces)

    def test_tetrahedron_full_step_maps_to_opposite_centroid(self):
        tet = make_tetrahedron()
        out = laplacian_smooth(tet, iterations=1, lam=1.0)
        for i in range(4):
            others = np.delete(np.arange(4), i)
            expected = tet.vertices[others].mean(axis=0)
            assert np.allclose(out.vertices[i], expected)
        # symmetric solid: barycenter pinned, shape shrinks toward it
        assert np.allclose(out.vertices.mean(axis=0), tet.vertices.mean(axis=0))
        assert np.linalg.norm(out.vertices, axis=1).max() \
            < np.linalg.norm(tet.vertices, axis=1).max()

    def test_noisy_sphere_radial_deviation_decreases(self):
        sphere = make_icosphere(subdivisions=3)
        rng = np.random.default_rng(0)
        radial_noise = 1.0 + 0.05 * rng.standard_normal(sphere.n_vertices)
        noisy = TriMesh(sphere.vertices * radial_noise[:, None], sphere.faces)

        def rms_radial_deviation(mesh):
            radii = np.linalg.norm(mesh.vertices, axis=1)
            return np.sqrt(np.mean((radii - radii.mean()) ** 2))

        smoothed = laplacian_smooth(noisy, iterations=20, lam=0.5)
        assert rms_radial_deviation(smoothed) < rms_radial_deviation(noisy)

    def test_preserves_count_faces_and_barycenter(self):
        body = make_icosphere(subdivisions=2)
        rng = np.random.default_rng(3)
        bumpy = TriMesh(body.vertices + 0.03 * rng.standard_normal(body.vertices.shape),
                        body.faces)
        out = laplacian_smooth(bumpy, iterations=7, lam=0.7)
        assert out.n_vertices == bumpy.n_vertices
        assert np.array_equal(out.faces, bumpy.faces)
        assert np.abs(out.vertices.mean(axis=0) - bumpy.vertices.mean(axis=0)).max() < 1e-9

    def test_rejects_bad_lambda(self, icosphere):
        with pytest.raises(ValueError):
            laplacian_smooth(icosphere, iterations=1, lam=0.0)
        with pytest.raises(ValueError):
            laplacian_smooth(icosphere, iterations=1, lam=1.5)


class TestWatertight:
    def test_closed_cube(self, unit_cube):
        assert is_watertight(unit_cube)

    def test_cube_with_missing_face(self, unit_cube):
        opened = TriMesh(unit_cube.vertices, unit_cube.faces[:-1])
        assert not is_watertight(opened)

    def test_inconsistent_orientation_detected(self, unit_cube):
        faces = unit_cube.faces.copy()
        faces[0] = faces[0][::-1]
        flipped = TriMesh(unit_cube.vertices, faces)
        assert not is_watertight(flipped)


class TestSampleSurface:
    def test_single_triangle_samples_in_plane(self):
        mesh = TriMesh(np.array([[0, 0, 0], [2, 0, 0], [0, 2, 0]], float),
                       [[0, 1, 2]])
        points, _, _ = sample_surface(mesh, 500, seed=1)
        assert np.abs(points[:, 2]).max() < 1e-9
        assert (points[:, 0] >= -1e-9).all() and (points[:, 1] >= -1e-9).all()

    def test_area_weighting(self):
        # two triangles with areas 1 and 3
        verts = np.array([
            [0, 0, 0], [2, 0, 0], [0, 1, 0],
            [5, 0, 0], [11, 0, 0], [5, 1, 0],
        ], dtype=float)
        mesh = TriMesh(verts, [[0, 1, 2], [3, 4, 5]])
        _, face_ids, _ = sample_surface(mesh, 100_000, seed=7)
        frac = np.mean(face_ids == 1)
        assert frac == pytest.approx(0.75, abs=0.01)

    def test_same_seed_is_deterministic(self, icosphere):
        a = sample_surface(icosphere, 1000, seed=42)
        b = sample_surface(icosphere, 1000, seed=42)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_empirical_counts_match_area_weights(self, icosphere):
        n = 50_000
        _, face_ids, _ = sample_surface(icosphere, n, seed=11)
        observed = np.bincount(face_ids, minlength=icosphere.n_faces)
        areas = icosphere.face_areas()
        expected = n * areas / areas.sum()
        chi2 = np.sum((observed - expected) ** 2 / expected)
        dof = icosphere.n_faces - 1
        # chi-square mean is dof, std sqrt(2 dof); allow five sigma
        assert chi2 < dof + 5 * np.sqrt(2 * dof)

    def test_zero_samples(self, icosphere):
        points, face_ids, bary = sample_surface(icosphere, 0, seed=0)
        assert len(points) == 0 and len(face_ids) == 0 and len(bary) == 0


class TestObjIO:
    def test_round_trip_exact(self, tmp_path, icosphere):
        path = tmp_path / "sphere.obj"
        save_obj(icosphere, path)
        back = load_obj(path)
        assert np.array_equal(back.vertices, icosphere.vertices)
        assert np.array_equal(back.faces, icosphere.faces)

    def test_rejects_non_triangular_faces(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(MeshError, match="triangular"):
            load_obj(path)

    def test_ignores_comments_and_other_records(self, tmp_path):
        path = tmp_path / "mixed.obj"
        path.write_text(
            "# comment\nvn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\ns off\nf 1 2 3\n"
        )
        mesh = load_obj(path)
        assert mesh.n_vertices == 3 and mesh.n_faces == 1
