import numpy as np
import pytest

from morphkit.geomesh import Mesh
from morphkit.gsplat import (
    SH_C0,
    GaussianSet,
    bind_gaussians,
    closest_point_on_triangle,
    eval_sh_color,
    init_vertex_colors,
    load_gaussians,
    save_gaussians,
    update_gaussian_positions,
)
from morphkit.io import MeshParseError, write_ply
from morphkit.synth import make_icosphere

TRI = Mesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]), [[0, 1, 2]])


def _gs(points, sh=None, opacity=None, bands=1):
    n = len(points)
    sh = np.zeros((n, 3, bands)) if sh is None else sh
    op = np.full(n, 0.5) if opacity is None else opacity
    return GaussianSet.from_arrays(points, sh, op)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def surface_samples(mesh, n, rng, max_offset=0.02):
    f = rng.integers(0, mesh.n_faces, n)
    w = rng.dirichlet(np.ones(3), n)
    tri = mesh.vertices[mesh.faces[f]]
    d = rng.uniform(-max_offset, max_offset, n)
    return np.einsum("nk,nkd->nd", w, tri) + d[:, None] * mesh.face_normals[f]


def test_load_one_point_defaults(tmp_path):
    cols = {k: np.zeros(1, np.float32) for k in
            ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
             "rot_1", "rot_2", "rot_3")}
    cols["rot_0"] = np.array([2.0], np.float32)
    write_ply(tmp_path / "g.ply", [("vertex", cols)])
    gs = load_gaussians(tmp_path / "g.ply")
    assert gs.opacity[0] == 0.5
    assert np.array_equal(gs.rotation[0], [1, 0, 0, 0])
    assert gs.sh.shape == (1, 3, 1)


def test_load_missing_property(tmp_path):
    cols = {k: np.zeros(1, np.float32) for k in
            ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_2",
             "rot_0", "rot_1", "rot_2", "rot_3")}
    write_ply(tmp_path / "g.ply", [("vertex", cols)])
    with pytest.raises(MeshParseError, match="missing property scale_1"):
        load_gaussians(tmp_path / "g.ply")


def test_ply_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    n = 20
    cols = {}
    for k in ("x", "y", "z", "nx", "ny", "nz"):
        cols[k] = rng.normal(size=n).astype(np.float32)
    for k in range(3):
        cols[f"f_dc_{k}"] = rng.normal(size=n).astype(np.float32)
    for k in range(45):
        cols[f"f_rest_{k}"] = rng.normal(size=n).astype(np.float32)
    cols["opacity"] = rng.normal(size=n).astype(np.float32)
    for k in range(3):
        cols[f"scale_{k}"] = rng.normal(size=n).astype(np.float32)
    for k in range(4):
        cols[f"rot_{k}"] = rng.normal(size=n).astype(np.float32)
    write_ply(tmp_path / "a.ply", [("vertex", cols)])
    gs = load_gaussians(tmp_path / "a.ply")
    assert gs.sh.shape == (n, 3, 16)
    save_gaussians(tmp_path / "b.ply", gs)
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_covariance_spd():
    rng = np.random.default_rng(1)
    gs = GaussianSet.from_arrays(rng.normal(size=(10, 3)), np.zeros((10, 3, 1)), np.full(10, 0.5),
                                 log_scale=rng.normal(size=(10, 3)), rotation=rng.normal(size=(10, 4)))
    cov = gs.covariance()
    assert np.allclose(cov, np.transpose(cov, (0, 2, 1)))
    assert np.all(np.linalg.eigvalsh(cov) > 0)
    assert np.allclose(np.linalg.norm(gs.rotation, axis=1), 1, atol=1e-6)


def test_bind_centroid_vertex_and_offset():
    pts = np.array([[1 / 3, 1 / 3, 0.0], [0.0, 0.0, 0.0], [1 / 3, 1 / 3, 0.1]])
    b = bind_gaussians(_gs(pts), TRI).binding
    assert np.allclose(b.bary[0], 1 / 3, atol=1e-9) and abs(b.offset[0]) < 1e-9
    assert np.allclose(b.bary[1], [1, 0, 0]) and b.offset[1] == 0
    assert b.offset[2] == pytest.approx(0.1, abs=1e-12)


def test_bind_empty_mesh():
    with pytest.raises(ValueError):
        bind_gaussians(_gs(np.zeros((1, 3))), Mesh(np.zeros((0, 3)), np.zeros((0, 3))))


def test_closest_point_matches_brute_force():
    rng = np.random.default_rng(2)
    a, b, c = rng.normal(size=(3, 3))
    for _ in range(50):
        p = rng.normal(size=3) * 2
        q, w = closest_point_on_triangle(p, a, b, c)
        grid = np.array([(u, v) for u in np.linspace(0, 1, 201) for v in np.linspace(0, 1, 201) if u + v <= 1])
        cand = a + grid[:, :1] * (b - a) + grid[:, 1:] * (c - a)
        assert np.linalg.norm(p - q) <= np.linalg.norm(cand - p, axis=1).min() + 1e-9
        assert np.all(w >= -1e-12) and abs(w.sum() - 1) < 1e-9
        assert np.allclose(w @ np.stack([a, b, c]), q)


def test_bind_matches_exhaustive_search():
    rng = np.random.default_rng(3)
    mesh = make_icosphere(2)
    pts = rng.normal(size=(200, 3)) * 0.8
    gs = bind_gaussians(_gs(pts), mesh, chunk=37)
    V, F = mesh.vertices, mesh.faces
    for i in range(0, 200, 17):
        q, _ = closest_point_on_triangle(pts[i][None], V[F[:, 0]], V[F[:, 1]], V[F[:, 2]])
        d = np.linalg.norm(q - pts[i], axis=1)
        assert d[gs.binding.face_id[i]] <= d.min() + 1e-12


def test_identity_roundtrip_and_translation():
    rng = np.random.default_rng(4)
    mesh = make_icosphere(2)
    pts = surface_samples(mesh, 500, rng)
    gs = bind_gaussians(_gs(pts), mesh)
    assert np.abs(update_gaussian_positions(gs, mesh.vertices) - pts).max() < 1e-9
    u = np.array([0.3, -1.0, 2.0])
    moved = update_gaussian_positions(gs, mesh.vertices + u)
    assert np.abs(moved - (pts + u)).max() < 1e-12


def test_rigid_rotation_equivariance():
    rng = np.random.default_rng(5)
    mesh = make_icosphere(2)
    gs = bind_gaussians(_gs(surface_samples(mesh, 300, rng)), mesh)
    R = random_rotation(rng)
    rotated = update_gaussian_positions(gs, mesh.vertices @ R.T)
    assert np.abs(rotated - gs.positions @ R.T).max() < 1e-6


def test_sh_dc_examples():
    assert np.array_equal(eval_sh_color(np.zeros((3, 1)), [0, 0, 1]), [0.5, 0.5, 0.5])
    c = np.array([[1.0], [-0.5], [5.0]])
    expect = np.clip(0.5 + 0.2820948 * c[:, 0], 0, 1)
    assert np.allclose(eval_sh_color(c, [0, 0, 1]), expect, atol=1e-7)
    assert SH_C0 == pytest.approx(1 / (2 * np.sqrt(np.pi)))


def test_sh_band1_parity():
    sh = np.zeros((3, 4))
    sh[:, 0] = 0.1
    sh[:, 2] = [0.3, -0.2, 0.1]  # Y_1,0 coefficient
    up = eval_sh_color(sh, [0, 0, 1]) - 0.5 - SH_C0 * 0.1
    down = eval_sh_color(sh, [0, 0, -1]) - 0.5 - SH_C0 * 0.1
    assert np.allclose(up, -down, atol=1e-12) and not np.allclose(up, 0)


def _face_gaussians(mesh, rgb_per_face, alpha_per_face):
    tri = mesh.vertices[mesh.faces]
    pts = tri.mean(axis=1)
    sh = ((np.asarray(rgb_per_face, float) - 0.5) / SH_C0)[:, :, None]
    gs = _gs(pts, sh=sh, opacity=np.asarray(alpha_per_face, float))
    return bind_gaussians(gs, mesh)


def test_init_colors_all_red():
    mesh = make_icosphere(1)
    gs = _face_gaussians(mesh, np.tile([1.0, 0, 0], (mesh.n_faces, 1)), np.ones(mesh.n_faces) * 0.9)
    assert np.allclose(init_vertex_colors(mesh, gs).colors, [1, 0, 0], atol=1e-12)


def test_init_colors_mean_and_opacity_weighting():
    two = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [-1, 0, 0]]), [[0, 1, 2], [0, 2, 3]])
    gs = _face_gaussians(two, [[1, 0, 0], [0, 0, 1]], [1 - 1e-12, 1 - 1e-12])
    assert np.allclose(init_vertex_colors(two, gs).colors[0], [0.5, 0, 0.5], atol=1e-9)
    gs = _face_gaussians(two, [[1, 0, 0], [0, 0, 1]], [1 - 1e-12, 1e-12])
    assert np.allclose(init_vertex_colors(two, gs).colors[0], [1, 0, 0], atol=1e-9)


def test_init_colors_opacity_scale_invariance():
    rng = np.random.default_rng(6)
    mesh = make_icosphere(1)
    rgb = rng.uniform(size=(mesh.n_faces, 3))
    a = rng.uniform(0.1, 0.4, mesh.n_faces)
    c1 = init_vertex_colors(mesh, _face_gaussians(mesh, rgb, a)).colors
    c2 = init_vertex_colors(mesh, _face_gaussians(mesh, rgb, 2 * a)).colors
    assert np.allclose(c1, c2, atol=1e-9)


def test_init_colors_fills_uncovered_vertices():
    mesh = make_icosphere(1)
    gs = bind_gaussians(_gs(mesh.vertices[mesh.faces[:1]].mean(axis=1),
                            sh=np.full((1, 3, 1), 0.5 / SH_C0)), mesh)
    colors = init_vertex_colors(mesh, gs).colors
    assert np.allclose(colors, 1.0)


def test_init_colors_no_source():
    mesh = make_icosphere(0)
    gs = bind_gaussians(_gs(np.zeros((0, 3))), mesh)
    with pytest.raises(ValueError, match="no color source"):
        init_vertex_colors(mesh, gs)
