import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshwss.exceptions import MeshError
from meshwss.mesh import (INLET, OUTLET, BoundaryLoop, TriangleMesh, ball_neighbors, build_adjacency,
                          find_boundary_loops, load_mesh, orient_consistently, validate, vertex_normals,
                          write_obj)

from conftest import grid_mesh, icosphere, random_rotation


def tetrahedron():
    pos = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriangleMesh(pos, tris)


def test_tetrahedron_every_vertex_has_three_neighbors():
    g = build_adjacency(tetrahedron())
    assert g.degree().tolist() == [3, 3, 3, 3]


def test_grid_interior_vertex_degree_matches_brute_force():
    mesh = grid_mesh(3, 3)
    g = build_adjacency(mesh)
    edges = set()
    for a, b, c in mesh.triangles.tolist():
        edges |= {frozenset(e) for e in ((a, b), (b, c), (c, a))}
    brute = sorted(q for e in edges if 4 in e for q in e if q != 4)
    assert g.neighbors(4).tolist() == brute
    assert len(brute) == 6


def test_repeated_vertex_triangle_is_rejected():
    mesh = TriangleMesh(np.eye(3), np.array([[0, 1, 1]]))
    with pytest.raises(MeshError, match="degenerate"):
        build_adjacency(mesh)


def test_non_manifold_edge_is_named():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], dtype=float)
    tris = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    with pytest.raises(MeshError, match=r"\(0, 1\)"):
        build_adjacency(TriangleMesh(pos, tris))


def test_adjacency_is_symmetric_sorted_and_positive(tube):
    g = build_adjacency(tube)
    for p in range(0, g.n_vertices, 37):
        nb = g.neighbors(p)
        assert np.all(np.diff(nb) > 0)
        assert p not in nb
        for q in nb:
            assert p in g.neighbors(q)
    assert np.all(g.lengths > 0)


def test_adjacency_is_deterministic(tube):
    a, b = build_adjacency(tube), build_adjacency(TriangleMesh(tube.positions.copy(), tube.triangles.copy()))
    assert np.array_equal(a.indices, b.indices) and np.array_equal(a.lengths, b.lengths)


def test_flat_square_normals_point_up():
    n = vertex_normals(grid_mesh(4, 4))
    assert np.allclose(n, [0, 0, 1])


def test_sphere_normals_match_radial_direction():
    mesh = icosphere(400)
    n = vertex_normals(mesh)
    radial = mesh.positions / np.linalg.norm(mesh.positions, axis=1, keepdims=True)
    assert np.max(np.linalg.norm(n - radial, axis=1)) < 5e-2


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_normals_rotate_with_the_mesh(seed):
    mesh = icosphere(60)
    rot = random_rotation(seed)
    assert np.allclose(vertex_normals(mesh.rotated(rot)), vertex_normals(mesh) @ rot.T, atol=1e-12)
    assert np.allclose(vertex_normals(mesh.translated([3.0, -2.0, 7.0])), vertex_normals(mesh), atol=1e-12)


def test_fold_back_normal_raises():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    # two coincident triangles with opposite winding cancel at the shared vertices
    mesh = TriangleMesh(pos, np.array([[0, 1, 2], [0, 2, 1]]))
    with pytest.raises(MeshError, match="vertex"):
        vertex_normals(mesh)


def test_ball_smaller_than_edges_falls_back_to_one_ring():
    mesh = grid_mesh(3, 3)
    g = build_adjacency(mesh)
    assert ball_neighbors(mesh, 4, 0.1, g).tolist() == g.neighbors(4).tolist()


def test_ball_on_unit_strip():
    x = np.arange(8, dtype=float)
    pos = np.concatenate([np.stack([x, np.zeros(8), np.zeros(8)], 1), np.stack([x, np.full(8, 10.0), np.zeros(8)], 1)])
    tris = [(i, i + 1, 8 + i) for i in range(7)] + [(i + 1, 9 + i, 8 + i) for i in range(7)]
    mesh = TriangleMesh(pos, np.array(tris))
    brute = [q for q in range(16) if q != 3 and np.linalg.norm(pos[q] - pos[3]) <= 1.5]
    assert ball_neighbors(mesh, 3, 1.5).tolist() == brute == [2, 4]


def test_ball_of_mesh_diameter_is_everything(tube):
    diam = np.ptp(tube.positions, axis=0).max() * 2
    assert len(ball_neighbors(tube, 0, diam)) == tube.n_vertices - 1


@settings(max_examples=25, deadline=None)
@given(st.floats(1.0, 3.0), st.floats(0.0, 3.0), st.integers(0, 48))
def test_ball_is_monotone_in_radius(r1, extra, p):
    # radii of at least one grid spacing never trigger the one-ring fallback
    mesh = grid_mesh(7, 7)
    small, big = ball_neighbors(mesh, p, r1), ball_neighbors(mesh, p, r1 + extra)
    assert set(small.tolist()) <= set(big.tolist())


def test_closed_sphere_fails_inlet_check():
    report = validate(icosphere(50))
    assert not report.ok
    assert any("inlet" in msg for msg in report.loop_problems)


def test_open_cylinder_with_tagged_rims_is_ok(tube):
    assert validate(tube).ok, validate(tube).summary()


def test_inconsistent_winding_names_the_edge():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    report = validate(TriangleMesh(pos, np.array([[0, 1, 2], [1, 2, 3]])))
    assert report.winding_conflicts == [(1, 2)]
    assert "(1, 2)" in report.summary()


def test_boundary_loops_and_reorientation():
    mesh = grid_mesh(4, 3)
    loops = find_boundary_loops(mesh.triangles)
    assert len(loops) == 1 and len(loops[0]) == 10
    scrambled = mesh.triangles.copy()
    scrambled[::2] = scrambled[::2, ::-1]
    fixed = orient_consistently(scrambled)
    assert not validate(TriangleMesh(mesh.positions, fixed,
                                     (BoundaryLoop(loops[0], INLET), BoundaryLoop(loops[0], OUTLET)))).winding_conflicts


def test_obj_round_trip(tmp_path, tube):
    path = tmp_path / "t.obj"
    write_obj(path, tube.positions, tube.triangles)
    mesh = load_mesh(path, tube.boundary_loops)
    assert np.array_equal(mesh.triangles, tube.triangles)
    assert np.allclose(mesh.positions, tube.positions, rtol=0, atol=1e-9)
    assert len(mesh.loops_tagged(OUTLET)) == 1
