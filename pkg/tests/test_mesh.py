import numpy as np
import pytest

from polyfv.errors import DegenerateFace, InvertedCell, OpenCell, StarShapeViolation, TopologyError
from polyfv.generate import GenSpec, generate
from polyfv.mesh import Mesh, audit_mesh, cell_geometry, face_geometry, orthogonal_distance

CUBE_FACES = [
    [0, 3, 2, 1],  # z=0
    [4, 5, 6, 7],  # z=1
    [0, 1, 5, 4],  # y=0
    [2, 3, 7, 6],  # y=1
    [0, 4, 7, 3],  # x=0
    [1, 2, 6, 5],  # x=1
]
CUBE_POINTS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
    dtype=float,
)


def single_cell(points, faces):
    return Mesh.from_faces(points, faces, [0] * len(faces), [], 0)


def triangle_oracle(tris):
    """Area and centroid of a set of triangles given as (3, 3) arrays."""
    areas = np.array([0.5 * np.linalg.norm(np.cross(b - a, c - a)) for a, b, c in tris])
    cents = np.array([(a + b + c) / 3 for a, b, c in tris])
    return areas.sum(), (areas[:, None] * cents).sum(axis=0) / areas.sum()


class TestFaceGeometry:
    def test_unit_square(self):
        area, normal, centroid = face_geometry(CUBE_POINTS[[0, 1, 2, 3]])
        assert area == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(normal, [0, 0, 1], atol=1e-15)
        np.testing.assert_allclose(centroid, [0.5, 0.5, 0], atol=1e-15)

    def test_triangle(self):
        area, normal, centroid = face_geometry([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
        assert area == pytest.approx(0.5)
        np.testing.assert_allclose(centroid, [1 / 3, 1 / 3, 0], atol=1e-15)
        np.testing.assert_allclose(normal, [0, 0, 1], atol=1e-15)

    def test_warped_quad_matches_fan_triangle_sum(self):
        p = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0.2], [0, 1, 0]], dtype=float)
        c = p.mean(axis=0)
        tris = [(c, p[i], p[(i + 1) % 4]) for i in range(4)]
        area_ref, cen_ref = triangle_oracle(tris)
        area, normal, centroid = face_geometry(p)
        assert area == pytest.approx(area_ref, rel=1e-14)
        np.testing.assert_allclose(centroid, cen_ref, atol=1e-15)
        assert np.linalg.norm(normal) == pytest.approx(1.0, abs=1e-15)
        # the warp tilts the normal away from +z but keeps it mostly vertical
        assert normal[2] > 0.98

    def test_reversal_negates_normal(self, rng):
        p = rng.random((5, 3))
        a1, n1, c1 = face_geometry(p)
        a2, n2, c2 = face_geometry(p[::-1])
        assert a1 == pytest.approx(a2, rel=1e-14)
        np.testing.assert_allclose(n1, -n2, atol=1e-14)
        np.testing.assert_allclose(c1, c2, atol=1e-14)

    def test_collinear_loop_is_degenerate(self):
        with pytest.raises(DegenerateFace):
            face_geometry([[0, 0, 0], [1, 0, 0], [2, 0, 0]])


class TestCellGeometry:
    def test_unit_cube(self):
        m = single_cell(CUBE_POINTS, CUBE_FACES)
        vol, cen = cell_geometry(0, m)
        assert vol == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(cen, [0.5, 0.5, 0.5], atol=1e-15)

    def test_tetrahedron(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
        m = single_cell(pts, [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
        vol, cen = cell_geometry(0, m)
        assert vol == pytest.approx(1 / 6, rel=1e-14)
        np.testing.assert_allclose(cen, [0.25] * 3, atol=1e-15)
        assert m.cell_volume[0] == pytest.approx(1 / 6, rel=1e-14)

    def test_perturbed_hex_matches_tet_decomposition(self, rng):
        pts = CUBE_POINTS + 0.15 * (rng.random((8, 3)) - 0.5)
        m = single_cell(pts, CUBE_FACES)
        # signed tets (origin, face-centre, v_i, v_i+1) for every fan triangle
        vol_ref = 0.0
        for loop in CUBE_FACES:
            p = pts[loop]
            c = p.mean(axis=0)
            for i in range(len(p)):
                vol_ref += np.linalg.det(np.array([c, p[i], p[(i + 1) % len(p)]])) / 6.0
        vol, _ = cell_geometry(0, m)
        assert vol == pytest.approx(vol_ref, rel=1e-12)
        assert m.cell_volume[0] == pytest.approx(vol_ref, rel=1e-12)

    def test_apex_independence(self, small_meshes, rng):
        m = small_meshes["poly"]
        for cell in (0, m.n_cells // 2, m.n_cells - 1):
            v0, c0 = cell_geometry(cell, m)
            v1, c1 = cell_geometry(cell, m, apex=m.cell_centers[cell] + 0.05 * rng.random(3))
            assert v1 == pytest.approx(v0, rel=1e-12)
            np.testing.assert_allclose(c1, c0, atol=1e-12)

    def test_open_cell(self):
        m = Mesh.from_faces(CUBE_POINTS, CUBE_FACES, [0] * 6, [], 0)
        broken = Mesh.from_faces(CUBE_POINTS, CUBE_FACES[:5] + [[1, 2, 6]], [0] * 6, [], 0)
        cell_geometry(0, m)
        with pytest.raises(OpenCell):
            cell_geometry(0, broken)

    def test_inverted_cell(self):
        inside_out = [loop[::-1] for loop in CUBE_FACES]
        m = Mesh.from_faces(CUBE_POINTS, inside_out, [0] * 6, [], 0,
                            cell_centers=[[0.5, 0.5, 0.5]])
        with pytest.raises(InvertedCell):
            cell_geometry(0, m)


class TestOrthogonalDistance:
    def test_cube_faces(self):
        m = single_cell(CUBE_POINTS, CUBE_FACES)
        assert orthogonal_distance(0, 1, m) == pytest.approx(0.5)  # z=1
        assert orthogonal_distance(0, 0, m) == pytest.approx(0.5)  # z=0
        np.testing.assert_allclose(m.face_normal[0], [0, 0, -1], atol=1e-15)

    def test_skewed_hex_plane_distance(self, small_meshes):
        m = small_meshes["hexskew"]
        for f in range(0, m.n_faces, 7):
            area, normal, cen = face_geometry(m.points[m.face_loop(f)])
            ref = abs(np.dot(cen - m.cell_centers[m.owner[f]], normal))
            assert orthogonal_distance(int(m.owner[f]), f, m) == pytest.approx(ref, rel=1e-12)

    def test_star_shape_violation(self):
        m = single_cell(CUBE_POINTS, CUBE_FACES).copy_with_centers([[0.5, 0.5, 1.5]])
        with pytest.raises(StarShapeViolation):
            orthogonal_distance(0, 1, m)

    def test_foreign_face(self, two_cubes):
        with pytest.raises(TopologyError):
            orthogonal_distance(1, 1, two_cubes)


class TestAudit:
    def test_hex_passes_to_roundoff(self):
        report = audit_mesh(generate(GenSpec.default("hex", 10)))
        assert report.passed
        assert max(c.worst for c in report.checks) < 1e-12

    def test_flipped_face_breaks_two_cells(self):
        m = generate(GenSpec.default("hex", 3))
        verts = m.face_vertices.copy()
        a, b = m.face_offsets[0], m.face_offsets[1]
        verts[a:b] = verts[a:b][::-1]
        flipped = Mesh(m.points, m.face_offsets, verts, m.owner, m.neighbour, m.n_internal,
                       cell_centers=m.cell_centers)
        report = audit_mesh(flipped)
        assert not report.passed
        closed = report["closed_cell"]
        assert not closed.passed
        assert closed.n_failing == 2
        assert sorted(closed.failing) == sorted([int(m.owner[0]), int(m.neighbour[0])])

    def test_poly_tensor_identity(self, small_meshes):
        report = audit_mesh(small_meshes["poly"])
        assert report.passed
        assert report["volume_tensor"].worst < 1e-10

    def test_every_family_passes(self, family_mesh):
        family, m = family_mesh
        assert audit_mesh(m).passed, audit_mesh(m).summary()

    def test_summary_lines(self, two_cubes):
        text = audit_mesh(two_cubes).summary()
        assert text.count("PASS") == len(audit_mesh(two_cubes).checks)


def test_diameter_bounds_distance(family_mesh):
    _, m = family_mesh
    ni = m.n_internal
    assert np.all(m.cell_diameter[m.owner] >= m.d_owner)
    assert np.all(m.cell_diameter[m.neighbour] >= m.d_neighbour[:ni])


def test_geometry_is_read_only(two_cubes):
    with pytest.raises(ValueError):
        two_cubes.face_area[0] = 2.0


def test_two_cube_counts(two_cubes):
    m = two_cubes
    assert (m.n_points, m.n_faces, m.n_internal, m.n_cells) == (12, 11, 1, 2)
    np.testing.assert_allclose(m.cell_volume, [1.0, 1.0])
    np.testing.assert_allclose(m.cell_centers, [[0.5, 0.5, 0.5], [1.5, 0.5, 0.5]])
