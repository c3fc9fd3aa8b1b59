import numpy as np
import pytest

from morphkit import diffcore as dc
from morphkit.geomesh import normalize_mesh
from morphkit.gsplat import GaussianSet, bind_gaussians, load_gaussians
from morphkit.io import read_obj
from morphkit.morphflow import (
    DEFAULT_TIMESTEPS,
    FlowNet,
    MorphState,
    compute_morph_state,
    displacement_field,
    export_sequence,
    morph_colors,
    morph_positions,
    read_manifest,
)
from morphkit.synth import make_icosphere


def _net(seed=0):
    return FlowNet.create(dc.ParamStore(), dc.philox(seed), widths=(16, 16, 16))


@pytest.fixture
def sphere():
    return make_icosphere(1)


def test_displacement_examples(sphere):
    V = sphere.vertices
    n = len(V)
    eye = np.eye(n)
    assert np.array_equal(displacement_field(V, eye, V), np.zeros_like(V))
    u = np.array([0.1, -0.2, 0.3])
    assert np.abs(displacement_field(V, eye, V + u) - u).max() < 1e-15
    uniform = np.full((n, n), 1 / n)
    assert np.abs(displacement_field(V, uniform, V) - (V.mean(0) - V)).max() < 1e-12


def test_t_zero_exact_for_any_net(sphere):
    V = sphere.vertices
    pi = np.random.default_rng(0).dirichlet(np.ones(len(V)), len(V))
    out = morph_positions(_net(), V, pi, V * 2, 0.0).data
    assert np.array_equal(out, V)


def test_zero_weight_net_is_identity(sphere):
    net = _net()
    for name in net.store:
        net.store[name].data[...] = 0.0
    V = sphere.vertices
    for t in (0.3, 1.0):
        assert np.array_equal(morph_positions(net, V, np.eye(len(V)), V + 1, t).data, V)


@pytest.mark.parametrize("t", [-0.1, 1.5])
def test_t_out_of_range(sphere, t):
    V = sphere.vertices
    with pytest.raises(ValueError, match="t must lie"):
        morph_positions(_net(), V, np.eye(len(V)), V, t)


def test_color_examples():
    red = np.tile([1.0, 0, 0], (4, 1))
    blue = np.tile([0.0, 0, 1], (4, 1))
    eye = np.eye(4)
    assert np.array_equal(morph_colors(red, eye, blue, 0.0), red)
    assert np.allclose(morph_colors(red, eye, blue, 0.5), [0.5, 0, 0.5], atol=1e-15)
    perm = np.eye(4)[[2, 0, 3, 1]]
    C_T = np.random.default_rng(1).uniform(size=(4, 3))
    assert np.array_equal(morph_colors(red, perm, C_T, 1.0), C_T[[2, 0, 3, 1]])


def test_color_tensor_matches_array():
    rng = np.random.default_rng(2)
    C_S, C_T = rng.uniform(size=(5, 3)), rng.uniform(size=(6, 3))
    pi = rng.dirichlet(np.ones(6), 5)
    a = morph_colors(C_S, pi, C_T, 0.4)
    b = morph_colors(C_S, dc.Tensor(pi), C_T, 0.4).data
    assert np.abs(a - b).max() < 1e-15


def test_morph_state_endpoints(sphere):
    V = sphere.vertices
    rng = np.random.default_rng(3)
    C = rng.uniform(size=V.shape)
    pi = np.eye(len(V))
    st = compute_morph_state(_net(), V, pi, V, C, C[::-1])
    assert st.positions.shape == (11, len(V), 3)
    assert np.array_equal(st.positions[0], V)
    assert np.array_equal(st.colors[0], C)
    assert np.array_equal(st.colors[-1], C[::-1])


def test_morph_state_rejects_bad_timesteps():
    with pytest.raises(ValueError):
        MorphState(np.array([0.0, 0.5, 0.5, 1.0]), np.zeros((4, 1, 3)), np.zeros((4, 1, 3)))
    with pytest.raises(ValueError):
        MorphState(np.array([0.1, 1.0]), np.zeros((2, 1, 3)), np.zeros((2, 1, 3)))


def test_export_sequence_naming_and_denormalization(tmp_path):
    original = make_icosphere(1, radius=3.0).with_vertices(make_icosphere(1, radius=3.0).vertices + 7.0)
    mesh, tr = normalize_mesh(original)
    V = mesh.vertices
    rng = np.random.default_rng(4)
    C = rng.uniform(size=V.shape)
    st = compute_morph_state(_net(), V, np.eye(len(V)), V, C, C)
    pts = original.vertices[original.faces[:20]].mean(axis=1)
    gs = GaussianSet.from_arrays(pts, np.zeros((20, 3, 1)), np.full(20, 0.5))
    gs_norm = bind_gaussians(gs.similarity_transformed(tr.scale, tr.center), mesh)
    written = export_sequence(st, mesh, tmp_path, gs=gs_norm, transform=tr)
    names = sorted(p.name for p in tmp_path.glob("frame_*.obj"))
    assert names == [f"frame_{k:03d}.obj" for k in range(11)]
    assert len(list(tmp_path.glob("frame_*.ply"))) == 11 and len(written) == 22
    v0, f0, c0 = read_obj(tmp_path / "frame_000.obj")
    assert np.abs(v0 - original.vertices).max() < 1e-6
    assert np.array_equal(f0, original.faces)
    g0 = load_gaussians(tmp_path / "frame_000.ply")
    assert np.abs(g0.positions - pts).max() < 1e-6
    assert [t for _, t in read_manifest(tmp_path / "manifest.txt")] == list(DEFAULT_TIMESTEPS)
