"""3D Gaussian primitives anchored to mesh faces.

A Gaussian bound to face ``(V1, V2, V3)`` sits at ``w1*V1 + w2*V2 + w3*V3 + d*n_f``;
deforming the mesh moves it by re-evaluating that expression with the
deformed vertices and the deformed face normal.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geomesh import HybridGraph, Mesh, face_normals
from .io import MeshParseError, read_ply, write_ply

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)

REQUIRED = ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
            "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")
BINDING_PROPS = ("face_id", "face_v0", "face_v1", "face_v2", "bary_0", "bary_1", "bary_2", "offset")


@dataclass(frozen=True, eq=False)
class Binding:
    face_id: np.ndarray       # (N,) face index
    face_vertices: np.ndarray  # (N, 3) vertex indices of that face
    bary: np.ndarray          # (N, 3) nonnegative, rows sum to 1
    offset: np.ndarray        # (N,) signed distance along the face normal

    def __len__(self):
        return len(self.face_id)


@dataclass(frozen=True, eq=False)
class GaussianSet:
    """Gaussians stored as the raw per-vertex PLY columns (file order, file dtypes).

    Keeping the raw columns makes load/save lossless; the activated values
    (opacity in [0, 1], unit quaternions) are exposed as properties.
    """

    columns: dict
    binding: Binding | None = None

    def __post_init__(self):
        for k in REQUIRED:
            if k not in self.columns:
                raise KeyError(f"missing property {k}")
        n = {len(v) for v in self.columns.values()}
        if len(n) != 1:
            raise ValueError("Gaussian property columns differ in length")
        if self.binding is not None and len(self.binding) != len(self):
            raise ValueError("binding length does not match Gaussian count")
        sh_bands(self.columns)

    def __len__(self):
        return len(self.columns["x"])

    def _stack(self, names):
        return np.stack([np.asarray(self.columns[k], dtype=np.float64) for k in names], axis=1)

    @property
    def positions(self) -> np.ndarray:
        return self._stack(("x", "y", "z"))

    @property
    def opacity(self) -> np.ndarray:
        logit = np.asarray(self.columns["opacity"], dtype=np.float64)
        return 1.0 / (1.0 + np.exp(-logit))

    @property
    def log_scale(self) -> np.ndarray:
        return self._stack(("scale_0", "scale_1", "scale_2"))

    @property
    def rotation(self) -> np.ndarray:
        q = self._stack(("rot_0", "rot_1", "rot_2", "rot_3"))
        norm = np.linalg.norm(q, axis=1, keepdims=True)
        out = np.divide(q, norm, out=np.zeros_like(q), where=norm > 0)
        out[norm[:, 0] == 0, 0] = 1.0
        return out

    @property
    def sh(self) -> np.ndarray:
        """SH coefficients shaped ``(N, 3, B)``; B is 1, 4, 9 or 16."""
        b = sh_bands(self.columns)
        n = len(self)
        out = np.empty((n, 3, b))
        out[:, :, 0] = self._stack(("f_dc_0", "f_dc_1", "f_dc_2"))
        if b > 1:
            rest = self._stack([f"f_rest_{i}" for i in range(3 * (b - 1))])
            out[:, :, 1:] = rest.reshape(n, 3, b - 1)  # channel-major, as 3DGS writes it
        return out

    def covariance(self) -> np.ndarray:
        """``R S S^T R^T`` per Gaussian, shape ``(N, 3, 3)``."""
        R = quat_to_matrix(self.rotation)
        s = np.exp(self.log_scale)
        M = R * s[:, None, :]
        return M @ np.transpose(M, (0, 2, 1))

    def with_positions(self, positions) -> "GaussianSet":
        positions = np.asarray(positions, dtype=np.float64)
        cols = dict(self.columns)
        for k, name in enumerate(("x", "y", "z")):
            cols[name] = positions[:, k].astype(self.columns[name].dtype)
        return replace(self, columns=cols)

    def similarity_transformed(self, scale: float, center) -> "GaussianSet":
        """Apply ``p -> (p - center) * scale`` to positions, scales and binding offsets."""
        out = self.with_positions((self.positions - np.asarray(center)) * scale)
        cols = dict(out.columns)
        for k in ("scale_0", "scale_1", "scale_2"):
            cols[k] = (np.asarray(cols[k], dtype=np.float64) + np.log(scale)).astype(cols[k].dtype)
        b = self.binding
        if b is not None:
            b = replace(b, offset=b.offset * scale)
        return GaussianSet(cols, b)

    @classmethod
    def from_arrays(cls, positions, sh, opacity, log_scale=None, rotation=None, dtype=np.float64):
        """Build a set from activated values (opacity in (0, 1)); SH shaped (N, 3, B)."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(positions)
        sh = np.asarray(sh, dtype=np.float64)
        sh = sh.reshape(n, 3, sh.shape[-1] if sh.ndim == 3 else -1)
        opacity = np.clip(np.asarray(opacity, dtype=np.float64).reshape(n), 1e-12, 1 - 1e-12)
        log_scale = np.full((n, 3), -4.0) if log_scale is None else np.asarray(log_scale, float)
        rotation = np.tile([1.0, 0, 0, 0], (n, 1)) if rotation is None else np.asarray(rotation, float)
        cols = {}
        for k, name in enumerate("xyz"):
            cols[name] = positions[:, k].astype(dtype)
        for k in range(3):
            cols[f"f_dc_{k}"] = sh[:, k, 0].astype(dtype)
        rest = sh[:, :, 1:].reshape(n, 3 * (sh.shape[2] - 1))
        for k in range(rest.shape[1]):
            cols[f"f_rest_{k}"] = rest[:, k].astype(dtype)
        cols["opacity"] = np.log(opacity / (1.0 - opacity)).astype(dtype)
        for k in range(3):
            cols[f"scale_{k}"] = log_scale[:, k].astype(dtype)
        for k in range(4):
            cols[f"rot_{k}"] = rotation[:, k].astype(dtype)
        return cls(cols)


def sh_bands(columns) -> int:
    n_rest = sum(1 for k in columns if k.startswith("f_rest_"))
    if n_rest % 3 or (n_rest // 3 + 1) not in (1, 4, 9, 16):
        raise ValueError(f"{n_rest} f_rest properties do not form a valid SH degree")
    for i in range(n_rest):
        if f"f_rest_{i}" not in columns:
            raise KeyError(f"missing property f_rest_{i}")
    return n_rest // 3 + 1


def quat_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=1),
    ], axis=1)


# --------------------------------------------------------------------------- I/O


def load_gaussians(path) -> GaussianSet:
    """Read a 3DGS point PLY; binding columns written by :func:`save_gaussians` are restored."""
    ply = read_ply(path)
    vert = ply.data.get("vertex")
    if vert is None:
        raise MeshParseError("no vertex element", path)
    for k in REQUIRED:
        if k not in vert:
            raise MeshParseError(f"missing property {k}", path)
    cols = {k: np.asarray(v) for k, v in vert.items() if k not in BINDING_PROPS}
    binding = None
    if all(k in vert for k in BINDING_PROPS):
        binding = Binding(
            face_id=np.asarray(vert["face_id"], dtype=np.int64),
            face_vertices=np.stack([np.asarray(vert[f"face_v{k}"], dtype=np.int64) for k in range(3)], axis=1),
            bary=np.stack([np.asarray(vert[f"bary_{k}"], dtype=np.float64) for k in range(3)], axis=1),
            offset=np.asarray(vert["offset"], dtype=np.float64),
        )
    try:
        return GaussianSet(cols, binding)
    except (KeyError, ValueError) as e:
        raise MeshParseError(str(e).strip("'\""), path) from None


def save_gaussians(path, gs: GaussianSet, include_binding: bool = True):
    cols = dict(gs.columns)
    if include_binding and gs.binding is not None:
        b = gs.binding
        cols["face_id"] = b.face_id.astype(np.int32)
        for k in range(3):
            cols[f"face_v{k}"] = b.face_vertices[:, k].astype(np.int32)
        for k in range(3):
            cols[f"bary_{k}"] = b.bary[:, k].astype(np.float64)
        cols["offset"] = b.offset.astype(np.float64)
    write_ply(Path(path), [("vertex", cols)])


# --------------------------------------------------------------------------- binding


def closest_point_on_triangle(p, a, b, c):
    """Closest point on triangle(s) ``abc`` to ``p`` (broadcasting over leading axes).

    Returns ``(point, bary)`` with barycentric weights clamped to the triangle.
    Region classification follows Ericson, Real-Time Collision Detection, 5.1.5.
    """
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p, a, b, c)))
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    shape = d1.shape
    v = np.zeros(shape)
    w = np.zeros(shape)
    done = np.zeros(shape, dtype=bool)

    def assign(mask, vv, ww):
        m = mask & ~done
        v[m] = vv[m] if np.ndim(vv) else vv
        w[m] = ww[m] if np.ndim(ww) else ww
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), 0.0, 0.0)                          # vertex a
        assign((d3 >= 0) & (d4 <= d3), 1.0, 0.0)                         # vertex b
        assign((d6 >= 0) & (d5 <= d6), 0.0, 1.0)                         # vertex c
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), d1 / (d1 - d3), 0.0)   # edge ab
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 0.0, d2 / (d2 - d6))   # edge ac
        e = (d4 - d3) + (d5 - d6)
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), 1.0 - (d4 - d3) / e, (d4 - d3) / e)  # bc
        denom = va + vb + vc
        assign(np.ones(shape, dtype=bool), vb / denom, vc / denom)       # interior
    # degenerate (zero-area) triangles can yield nan; fall back to vertex a
    bad = ~np.isfinite(v) | ~np.isfinite(w)
    v[bad] = 0.0
    w[bad] = 0.0
    u = 1.0 - v - w
    bary = np.stack([u, v, w], axis=-1)
    point = a + v[..., None] * ab + w[..., None] * ac
    return point, bary


def bind_gaussians(gs: GaussianSet, mesh: Mesh, chunk: int = 512) -> GaussianSet:
    """Attach every Gaussian to its closest face (ties: lowest face index).

    Candidate faces are pruned with a bounding-sphere lower bound, so the
    result is identical to an exhaustive search.
    """
    if mesh.n_faces == 0:
        raise ValueError("cannot bind Gaussians to an empty mesh")
    V, F = mesh.vertices, mesh.faces
    A, B, C = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    centroid = (A + B + C) / 3.0
    radius = np.max(np.stack([np.linalg.norm(X - centroid, axis=1) for X in (A, B, C)]), axis=0)
    nf = face_normals(V, F)
    P = gs.positions
    n = len(P)
    face_id = np.empty(n, dtype=np.int64)
    bary = np.empty((n, 3))
    closest = np.empty((n, 3))
    n_probe = min(8, len(F))
    for s in range(0, n, chunk):
        p = P[s:s + chunk]
        dc = np.linalg.norm(p[:, None, :] - centroid[None, :, :], axis=2)
        probe = np.argsort(dc, axis=1, kind="stable")[:, :n_probe]
        q, _ = closest_point_on_triangle(p[:, None, :], A[probe], B[probe], C[probe])
        upper = np.linalg.norm(q - p[:, None, :], axis=2).min(axis=1)
        lower = dc - radius[None, :]
        cand = lower <= upper[:, None] * (1 + 1e-9) + 1e-12
        rows, faces = np.nonzero(cand)  # row-major: faces ascending within each row
        q, bc = closest_point_on_triangle(p[rows], A[faces], B[faces], C[faces])
        d = np.linalg.norm(q - p[rows], axis=1)
        # per row: smallest distance, then lowest face index
        order = np.lexsort((faces, d, rows))
        first = np.ones(len(order), dtype=bool)
        first[1:] = rows[order][1:] != rows[order][:-1]
        pick = order[first]
        face_id[s + rows[pick]] = faces[pick]
        bary[s + rows[pick]] = bc[pick]
        closest[s + rows[pick]] = q[pick]
    offset = ((P - closest) * nf[face_id]).sum(axis=1)
    binding = Binding(face_id, F[face_id].copy(), bary, offset)
    return replace(gs, binding=binding)


def update_gaussian_positions(gs: GaussianSet, deformed_vertices) -> np.ndarray:
    """Re-anchor bound Gaussians on deformed vertices, keeping the normal offset."""
    b = gs.binding
    if b is None:
        raise ValueError("Gaussian set is not bound to a mesh")
    V = np.asarray(deformed_vertices, dtype=np.float64)
    tri = V[b.face_vertices]  # (N, 3, 3)
    base = np.einsum("nk,nkd->nd", b.bary, tri)
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    return base + b.offset[:, None] * n


# --------------------------------------------------------------------------- colour


def sh_basis(dirs, bands: int) -> np.ndarray:
    """Real SH basis (3DGS sign convention) at unit directions, shape ``(M, bands)``."""
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out = [np.full(len(d), SH_C0)]
    if bands > 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if bands > 4:
        xx, yy, zz, xy, yz, xz = x * x, y * y, z * z, x * y, y * z, x * z
        out += [SH_C2[0] * xy, SH_C2[1] * yz, SH_C2[2] * (2 * zz - xx - yy),
                SH_C2[3] * xz, SH_C2[4] * (xx - yy)]
    if bands > 9:
        out += [SH_C3[0] * y * (3 * xx - yy), SH_C3[1] * xy * z, SH_C3[2] * y * (4 * zz - xx - yy),
                SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy), SH_C3[4] * x * (4 * zz - xx - yy),
                SH_C3[5] * z * (xx - yy), SH_C3[6] * x * (xx - 3 * yy)]
    return np.stack(out, axis=1)


def eval_sh_color(sh, view_dir) -> np.ndarray:
    """RGB in [0, 1] from SH coefficients ``(..., 3, B)`` seen along ``view_dir``."""
    sh = np.asarray(sh, dtype=np.float64)
    basis = sh_basis(view_dir, sh.shape[-1])[0]
    return np.clip(sh @ basis + 0.5, 0.0, 1.0)


def nearest_source(graph: HybridGraph, sources) -> np.ndarray:
    """For each vertex, the graph-nearest vertex among ``sources`` (-1 if unreachable).

    Ties in distance go to the lowest source index.
    """
    indptr, indices, weights = graph.csr
    owner = np.full(graph.n, -1, dtype=np.int64)
    best = [(np.inf, -1)] * graph.n
    heap = []
    for s in sorted(int(s) for s in sources):
        best[s] = (0.0, s)
        heap.append((0.0, s, s))
    heapq.heapify(heap)
    while heap:
        du, src, u = heapq.heappop(heap)
        if owner[u] >= 0:
            continue
        owner[u] = src
        for e in range(indptr[u], indptr[u + 1]):
            v = int(indices[e])
            cand = (du + weights[e], src)
            if owner[v] < 0 and cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, (cand[0], src, v))
    return owner


def init_vertex_colors(mesh: Mesh, gs: GaussianSet, view_dir=(0.0, 0.0, 1.0),
                       graph: HybridGraph | None = None) -> Mesh:
    """Opacity-weighted mean colour of Gaussians on each vertex's incident faces."""
    b = gs.binding
    if b is None:
        raise ValueError("Gaussian set is not bound to a mesh")
    if len(gs) == 0:
        raise ValueError("no color source: no bound Gaussians")
    rgb = eval_sh_color(gs.sh, view_dir)
    alpha = gs.opacity
    n = mesh.n_vertices
    acc = np.zeros((n, 3))
    wsum = np.zeros(n)
    # index-ordered accumulation keeps the reduction deterministic
    idx = b.face_vertices.ravel()
    np.add.at(acc, idx, np.repeat(alpha[:, None] * rgb, 3, axis=0))
    np.add.at(wsum, idx, np.repeat(alpha, 3))
    colored = wsum > 0
    if not colored.any():
        raise ValueError("no color source: every bound Gaussian has zero opacity")
    colors = np.zeros((n, 3))
    colors[colored] = acc[colored] / wsum[colored, None]
    if not colored.all():
        if graph is None:
            from .geomesh import build_hybrid_graph
            graph = build_hybrid_graph(mesh)
        owner = nearest_source(graph, np.nonzero(colored)[0])
        missing = np.nonzero(~colored)[0]
        for v in missing:
            o = owner[v]
            if o < 0:  # different component: fall back to Euclidean nearest
                cand = np.nonzero(colored)[0]
                d = np.linalg.norm(mesh.vertices[cand] - mesh.vertices[v], axis=1)
                o = cand[int(np.argmin(d))]
            colors[v] = colors[o]
    return mesh.with_colors(colors)
