import math
import warnings

import numpy as np
import pytest

from morphkit.geomesh import (
    TAG_BOTH,
    ConnectivityWarning,
    Mesh,
    build_hybrid_graph,
    farthest_point_sample,
    geodesic_table,
    knn_indices,
    load_mesh,
    normalize_mesh,
    save_mesh,
)
from morphkit.io import MeshParseError
from morphkit.synth import make_icosphere

from oracles import floyd_warshall, random_mesh

CUBE_V = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
CUBE_F = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
                   [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]])


def test_mesh_rejects_bad_faces():
    with pytest.raises(ValueError, match="out of range"):
        Mesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(ValueError, match="degenerate"):
        Mesh(np.eye(3), [[0, 1, 1]])


def test_mesh_arrays_are_read_only():
    m = Mesh(np.eye(3), [[0, 1, 2]])
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


def test_vertex_normals_unit_length():
    m = make_icosphere(2)
    assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0, atol=1e-6)
    # outward on a sphere
    assert np.all(np.sum(m.normals * m.vertices, axis=1) > 0.99)


def test_normalize_cube_offset():
    m, tr = normalize_mesh(Mesh(CUBE_V + 4.5, CUBE_F))
    assert np.allclose(tr.center, (5, 5, 5)) and tr.scale == 1.0
    assert np.allclose(m.vertices.mean(axis=0), 0, atol=1e-15)
    assert np.ptp(m.vertices, axis=0).max() == pytest.approx(1.0)


def test_normalize_cube_edge_two():
    _, tr = normalize_mesh(Mesh(2 * CUBE_V - 1, CUBE_F))
    assert tr.scale == 0.5


def test_normalize_zero_extent():
    with pytest.raises(ValueError, match="zero extent"):
        normalize_mesh(Mesh(np.zeros((1, 3)), np.zeros((0, 3))))


def test_normalize_idempotent_and_invertible():
    rng = np.random.default_rng(3)
    v, f = random_mesh(rng)
    m1, tr = normalize_mesh(Mesh(v * 7 + 2, f))
    m2, _ = normalize_mesh(m1)
    assert np.abs(m2.vertices - m1.vertices).max() < 1e-12
    assert np.abs(tr.invert(m1.vertices) - (v * 7 + 2)).max() < 1e-12


def test_hybrid_single_triangle():
    tri = Mesh(np.eye(3), [[0, 1, 2]])
    # with k=1 three vertices yield at most two distinct nearest-neighbour pairs
    g1 = build_hybrid_graph(tri, k=1)
    assert len(g1.edges) == 3 and (g1.tags == TAG_BOTH).sum() == 2
    g2 = build_hybrid_graph(tri, k=2)
    assert len(g2.edges) == 3 and np.all(g2.tags == TAG_BOTH)


def test_hybrid_two_far_triangles():
    v = np.concatenate([np.eye(3), np.eye(3) + 100.0])
    g = build_hybrid_graph(Mesh(v, [[0, 1, 2], [3, 4, 5]]), k=1)
    assert len(g.edges) == 6
    assert g.n_components() == 2


def test_hybrid_tetrahedron_complete():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    g = build_hybrid_graph(Mesh(v, [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]), k=3)
    assert len(g.edges) == 6


def test_hybrid_contains_adjacency_and_knn():
    m = make_icosphere(1)
    g = build_hybrid_graph(m, k=8)
    pairs = {tuple(e) for e in g.edges.tolist()}
    assert {tuple(e) for e in m.edges.tolist()} <= pairs
    nn = knn_indices(m.vertices, 8)
    for i in range(m.n_vertices):
        for j in nn[i]:
            assert (min(i, j), max(i, j)) in pairs
    assert np.all(g.weights > 0)
    assert len(pairs) == len(g.edges)


def test_knn_tie_prefers_lower_index():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0]])
    assert knn_indices(pts, 1)[0, 0] == 1


def test_hybrid_permutation_equivariant():
    rng = np.random.default_rng(5)
    v, f = random_mesh(rng, 20, 30)
    perm = rng.permutation(len(v))
    inv = np.argsort(perm)
    g = build_hybrid_graph(Mesh(v, f), 4)
    gp = build_hybrid_graph(Mesh(v[perm], inv[f]), 4)
    mapped = np.sort(perm[gp.edges], axis=1)
    assert {tuple(e) for e in mapped.tolist()} == {tuple(e) for e in g.edges.tolist()}


def test_geodesic_unit_square_diagonal():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    g = build_hybrid_graph(Mesh(v, [[0, 1, 2], [0, 2, 3]]), k=1)
    t = geodesic_table(g, [0, 1, 2, 3])
    assert t.dist[0, 2] == pytest.approx(math.sqrt(2), abs=1e-12)
    assert np.all(np.diag(t.dist) == 0)


def test_geodesic_path_graph():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    g = build_hybrid_graph(Mesh(v, np.zeros((0, 3))), k=1)
    assert len(g.edges) == 2
    assert geodesic_table(g, [0, 1, 2]).dist[0, 2] == 2.0


def test_geodesic_empty_samples():
    g = build_hybrid_graph(make_icosphere(0), 3)
    with pytest.raises(ValueError, match="empty"):
        geodesic_table(g, [])


def test_geodesic_disconnected_is_inf_with_warning():
    v = np.concatenate([np.eye(3), np.eye(3) + 100.0])
    g = build_hybrid_graph(Mesh(v, [[0, 1, 2], [3, 4, 5]]), k=1)
    with pytest.warns(ConnectivityWarning):
        t = geodesic_table(g, [0, 3])
    assert np.isinf(t.dist[0, 1]) and t.dist[0, 0] == 0


@pytest.mark.parametrize("seed", range(5))
def test_geodesic_matches_floyd_warshall(seed):
    rng = np.random.default_rng(seed)
    v, f = random_mesh(rng)
    g = build_hybrid_graph(Mesh(v, f), int(rng.integers(1, 9)))
    ids = np.sort(rng.choice(len(v), size=min(len(v), 15), replace=False))
    t = geodesic_table(g, ids)
    ref = floyd_warshall(g.n, g.edges, g.weights)[np.ix_(ids, ids)]
    assert np.abs(t.dist - ref).max() < 1e-9
    assert np.array_equal(t.dist, t.dist.T)
    # triangle inequality on the sampled set
    d = t.dist
    assert np.all(d[:, None, :] <= d[:, :, None] + d[None, :, :] + 1e-12)


def test_more_knn_never_lengthens():
    m = make_icosphere(2)
    ids = farthest_point_sample(m, 40)
    d4 = geodesic_table(build_hybrid_graph(m, 4), ids).dist
    d12 = geodesic_table(build_hybrid_graph(m, 12), ids).dist
    assert np.all(d12 <= d4 + 1e-12)


def test_geodesic_parallel_equals_serial():
    m = make_icosphere(2)
    g = build_hybrid_graph(m, 8)
    ids = farthest_point_sample(m, 60)
    a = geodesic_table(g, ids, workers=1).dist
    b = geodesic_table(g, ids, workers=2).dist
    assert np.array_equal(a, b)


def test_fps_examples():
    m = make_icosphere(1)
    assert np.array_equal(farthest_point_sample(m, m.n_vertices), np.arange(m.n_vertices))
    assert farthest_point_sample(m, 1).tolist() == [0]
    seg = np.array([[0.0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]])
    assert farthest_point_sample(seg, 2).tolist() == [0, 2]


def test_fps_too_many():
    with pytest.raises(ValueError):
        farthest_point_sample(np.zeros((2, 3)), 3)


def test_load_obj_minimal(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_mesh(p)
    assert m.n_vertices == 3 and m.n_faces == 1


def test_load_obj_two_index_face(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n")
    with pytest.raises(MeshParseError) as e:
        load_mesh(p)
    assert e.value.line == 4 and "line 4" in str(e.value)


def test_load_ply_quad_fans(tmp_path):
    p = tmp_path / "quad.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n"
                 "property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
                 "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    m = load_mesh(p)
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_save_load_roundtrip(tmp_path):
    m = make_icosphere(1)
    m = m.with_colors(np.random.default_rng(0).uniform(size=(m.n_vertices, 3)))
    save_mesh(tmp_path / "m.obj", m)
    r = load_mesh(tmp_path / "m.obj")
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.faces, m.faces)
    assert np.array_equal(r.colors, m.colors)


def test_connectivity_warning_not_raised_on_connected():
    m = make_icosphere(1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        geodesic_table(build_hybrid_graph(m), [0, 1, 2])
