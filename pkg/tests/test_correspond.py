import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphkit import diffcore as dc
from morphkit.correspond import (
    Correspondence,
    FeatureNet,
    MeshAggregator,
    build_pi,
    correspondence_accuracy,
    vertex_features,
)
from morphkit.geomesh import GeodesicTable, Mesh, build_hybrid_graph, farthest_point_sample, geodesic_table
from morphkit.synth import make_icosphere


def _net(seed=0, hidden=16, out_dim=8):
    return FeatureNet.create(dc.ParamStore(), dc.philox(seed), hidden=hidden, out_dim=out_dim)


def test_zero_weight_network_gives_zero_rows():
    net = _net()
    for name in net.store:
        net.store[name].data[...] = 0.0
    f = vertex_features(make_icosphere(1), net).data
    assert np.array_equal(f, np.zeros_like(f))


def test_features_unit_norm_and_shape():
    mesh = make_icosphere(1)
    f = vertex_features(mesh, _net()).data
    assert f.shape == (mesh.n_vertices, 8)
    assert np.abs(np.linalg.norm(f, axis=1) - 1).max() < 1e-12


def test_features_permutation_equivariant():
    rng = np.random.default_rng(0)
    mesh = make_icosphere(1)
    perm = rng.permutation(mesh.n_vertices)
    inv = np.argsort(perm)
    permuted = Mesh(mesh.vertices[perm], inv[mesh.faces])
    net = _net()
    a = vertex_features(mesh, net).data
    b = vertex_features(permuted, net).data
    assert np.abs(b - a[perm]).max() < 1e-12


def test_translation_changes_features():
    mesh = make_icosphere(1)
    net = _net()
    moved = Mesh(mesh.vertices + [0.5, 0, 0], mesh.faces)
    assert not np.allclose(vertex_features(mesh, net).data, vertex_features(moved, net).data)


def test_isolated_vertex_aggregates_self():
    mesh = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]]), [[0, 1, 2]])
    x = dc.Tensor(np.arange(8.0).reshape(4, 2))
    out = MeshAggregator(mesh)(x).data
    assert np.array_equal(out[3], [6.0, 7.0])
    assert np.allclose(out[0], x.data[:3].mean(axis=0))


def test_pi_identical_features_uniform():
    f = np.tile([[1.0, 0, 0]], (4, 1))
    pi = build_pi(f, np.tile([[1.0, 0, 0]], (6, 1)), 10.0).data
    assert np.abs(pi - 1 / 6).max() < 1e-15


def test_pi_sigma_zero_uniform():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(5, 3))
    pi = build_pi(a, rng.normal(size=(7, 3)), 0.0).data
    assert np.abs(pi - 1 / 7).max() < 1e-15


def test_pi_sharpens_to_permutation():
    f = np.eye(6)
    perm = np.random.default_rng(2).permutation(6)
    pi = build_pi(f, f[perm], 200.0).data
    # closed form: 1 / (1 + 5 exp(-200))
    assert pi.max(axis=1).min() > 0.99
    assert np.array_equal(pi.argmax(axis=1), np.argsort(perm))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 50))
def test_pi_row_stochastic(seed, sigma):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(6, 4))
    g = rng.normal(size=(9, 4))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    pi = build_pi(f, g, sigma).data
    assert np.all(pi >= 0) and np.all(pi <= 1)
    assert np.abs(pi.sum(axis=1) - 1).max() < 1e-9


def test_pi_argmax_invariant_to_sigma():
    rng = np.random.default_rng(3)
    f, g = rng.normal(size=(8, 4)), rng.normal(size=(10, 4))
    assert np.array_equal(build_pi(f, g, 1.0).data.argmax(1), build_pi(f, g, 37.0).data.argmax(1))


def test_pi_permutation_equivariant_both_arguments():
    rng = np.random.default_rng(4)
    f, g = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
    p, q = rng.permutation(5), rng.permutation(7)
    a = build_pi(f, g, 5.0).data
    b = build_pi(f[p], g[q], 5.0).data
    assert np.abs(b - a[np.ix_(p, q)]).max() < 1e-15


def _table(mesh, n=30):
    return geodesic_table(build_hybrid_graph(mesh), farthest_point_sample(mesh, n))


def test_accuracy_exact_permutation_is_zero():
    mesh = make_icosphere(1)
    table = _table(mesh)
    gt = np.random.default_rng(5).permutation(mesh.n_vertices)
    pi = np.eye(mesh.n_vertices)[gt]
    assert correspondence_accuracy(Correspondence(pi), gt, table) == 0.0


def test_accuracy_uniform_is_mean_to_first_column():
    mesh = make_icosphere(1)
    table = _table(mesh)
    gt = np.arange(mesh.n_vertices)
    pi = np.full((mesh.n_vertices, mesh.n_vertices), 1 / mesh.n_vertices)
    # uniform rows tie everywhere; argmax resolves to the first sampled column
    expect = table.dist[0].mean()
    assert correspondence_accuracy(pi, gt, table) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(table.dist.mean(), rel=0.25)


def test_argmax_tie_lowest_column():
    assert Correspondence(np.array([[0.25, 0.5, 0.5, 0.25]])).argmax().tolist() == [1]


def test_correspondence_save_load(tmp_path):
    pi = build_pi(np.eye(3), np.eye(3), 4.0).data
    Correspondence(pi).save(tmp_path / "pi.mkt")
    assert np.array_equal(Correspondence.load(tmp_path / "pi.mkt").pi, pi)


def test_accuracy_rejects_unsampled_ground_truth():
    table = GeodesicTable(np.array([0, 1]), np.array([[0.0, 1], [1, 0]]))
    with pytest.raises(ValueError):
        correspondence_accuracy(np.eye(3), np.array([2, 2, 2]), table)
