"""Triangle meshes, hybrid adjacency/KNN graphs and graph geodesics."""

from __future__ import annotations

import heapq
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .io import MeshParseError, read_obj, read_ply_mesh, write_obj

logger = logging.getLogger(__name__)

TAG_ADJ = 1
TAG_KNN = 2
TAG_BOTH = TAG_ADJ | TAG_KNN
TAG_NAMES = {TAG_ADJ: "adjacency", TAG_KNN: "knn", TAG_BOTH: "both"}


class ConnectivityWarning(UserWarning):
    """Some sampled vertex pairs are not connected in the hybrid graph."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Indexed triangle mesh.

    Arrays are copied and made read-only on construction. ``normals`` are
    derived lazily by area-weighted averaging of face normals.
    """

    vertices: np.ndarray
    faces: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3)
        f = _frozen(self.faces, np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError(f"face index out of range for {len(v)} vertices")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("degenerate face (repeated vertex index)")
        if self.colors is not None:
            c = _frozen(self.colors, np.float64).reshape(-1, 3)
            if len(c) != len(v):
                raise ValueError(f"{len(c)} colors for {len(v)} vertices")
            object.__setattr__(self, "colors", c)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_colors(self, colors) -> "Mesh":
        return Mesh(self.vertices, self.faces, colors)

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(vertices, self.faces, self.colors)

    @cached_property
    def face_normals(self) -> np.ndarray:
        return face_normals(self.vertices, self.faces)

    @cached_property
    def normals(self) -> np.ndarray:
        return vertex_normals(self.vertices, self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected face-adjacency edges ``(i, j)`` with ``i < j``, sorted."""
        return adjacency_edges(self.faces)


def face_normals(vertices, faces, return_area=False):
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    cr = np.cross(b - a, c - a)
    norm = np.linalg.norm(cr, axis=1)
    n = np.divide(cr, norm[:, None], out=np.zeros_like(cr), where=norm[:, None] > 0)
    if return_area:
        return n, 0.5 * norm
    return n


def vertex_normals(vertices, faces):
    """Area-weighted average of incident face normals, normalized."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if not len(faces):
        return np.zeros_like(vertices)
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    # the unnormalized cross product is already area-weighted (|cr| = 2 * area)
    cr = np.cross(b - a, c - a)
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, faces[:, k], cr)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)


def adjacency_edges(faces) -> np.ndarray:
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if not len(faces):
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def load_mesh(path) -> Mesh:
    """Load an OBJ or PLY triangle mesh; polygons are fan-triangulated."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        v, f, c = read_obj(path)
    elif suffix == ".ply":
        v, f, c = read_ply_mesh(path)
    else:
        raise MeshParseError(f"unsupported mesh extension {suffix!r}", path)
    if c is not None:
        c = np.clip(c, 0.0, 1.0)
    return Mesh(v, f, c)


def save_mesh(path, mesh: Mesh, colors=None):
    write_obj(path, mesh.vertices, mesh.faces, mesh.colors if colors is None else colors)


@dataclass(frozen=True)
class Normalization:
    """``normalized = (original - center) * scale``."""

    scale: float
    center: tuple

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) * self.scale

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale + np.asarray(self.center)


def normalize_mesh(mesh: Mesh) -> tuple[Mesh, Normalization]:
    """Center the vertex centroid at the origin and scale the longest bbox edge to 1."""
    if mesh.n_vertices == 0:
        raise ValueError("cannot normalize a mesh without vertices")
    v = mesh.vertices
    extent = float((v.max(axis=0) - v.min(axis=0)).max())
    if extent == 0.0:
        raise ValueError("zero extent: all vertices coincide")
    center = v.mean(axis=0)
    tr = Normalization(1.0 / extent, tuple(float(x) for x in center))
    return mesh.with_vertices(tr.apply(v)), tr


# --------------------------------------------------------------------------- hybrid graph


@dataclass(frozen=True, eq=False)
class HybridGraph:
    """Weighted undirected graph: face adjacency united with symmetric KNN.

    ``edges`` holds ``(i, j)`` with ``i < j`` in lexicographic order;
    ``weights`` the Euclidean lengths; ``tags`` a TAG_* bit mask per edge.
    """

    n: int
    edges: np.ndarray
    weights: np.ndarray
    tags: np.ndarray

    def tag_names(self):
        return [TAG_NAMES[int(t)] for t in self.tags]

    @cached_property
    def csr(self):
        """Symmetric CSR arrays ``(indptr, indices, weights)``; neighbors sorted by index."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        src = np.concatenate([i, j])
        dst = np.concatenate([j, i])
        w = np.concatenate([self.weights, self.weights])
        order = np.lexsort((dst, src))
        src, dst, w = src[order], dst[order], w[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst, w

    def n_components(self) -> int:
        parent = list(range(self.n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for a, b in self.edges:
            ra, rb = find(int(a)), find(int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        return len({find(a) for a in range(self.n)})


def knn_indices(points, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other points per row; ties go to the lower index."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    k = min(k, n - 1)
    if k <= 0:
        return np.zeros((n, 0), dtype=np.int64)
    out = np.empty((n, k), dtype=np.int64)
    chunk = max(1, 1_000_000 // max(n, 1))
    for s in range(0, n, chunk):
        blk = points[s:s + chunk]
        d2 = ((blk[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        rows = np.arange(len(blk))
        d2[rows, s + rows] = np.inf
        # stable sort keeps the lowest index first among equal distances
        out[s:s + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def build_hybrid_graph(mesh: Mesh, k: int = 8) -> HybridGraph:
    """Union of face-sharing vertex pairs and symmetric k-nearest-neighbour pairs."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = mesh.n_vertices
    adj = mesh.edges
    nn = knn_indices(mesh.vertices, k)
    knn = np.stack([np.repeat(np.arange(n), nn.shape[1]), nn.ravel()], axis=1)
    knn.sort(axis=1)
    knn = np.unique(knn, axis=0) if len(knn) else knn.reshape(0, 2)

    key_adj = adj[:, 0] * n + adj[:, 1]
    key_knn = knn[:, 0] * n + knn[:, 1]
    keys = np.union1d(key_adj, key_knn)
    tags = np.where(np.isin(keys, key_adj), TAG_ADJ, 0) | np.where(np.isin(keys, key_knn), TAG_KNN, 0)
    edges = np.stack([keys // n, keys % n], axis=1).astype(np.int64)
    v = mesh.vertices
    w = np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1)
    return HybridGraph(n, _frozen(edges, np.int64).reshape(-1, 2), _frozen(w, np.float64),
                       _frozen(tags, np.int8))


# --------------------------------------------------------------------------- geodesics


@dataclass(frozen=True, eq=False)
class GeodesicTable:
    sample_ids: np.ndarray
    dist: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", _frozen(self.sample_ids, np.int64))
        object.__setattr__(self, "dist", _frozen(self.dist, np.float64))

    @property
    def size(self) -> int:
        return len(self.sample_ids)

    def index_of(self, vertex_ids) -> np.ndarray:
        """Positions of ``vertex_ids`` inside ``sample_ids`` (KeyError if absent)."""
        lookup = {int(v): i for i, v in enumerate(self.sample_ids)}
        try:
            return np.array([lookup[int(v)] for v in np.atleast_1d(vertex_ids)], dtype=np.int64)
        except KeyError as e:
            raise KeyError(f"vertex {e.args[0]} is not in the sampled set") from None


def dijkstra(indptr, indices, weights, source: int, n: int) -> np.ndarray:
    """Single-source shortest paths over CSR adjacency. Unreached vertices get +inf.

    The heap is keyed on ``(distance, vertex)`` so equal distances settle the
    lowest vertex index first.
    """
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    done = np.zeros(n, dtype=bool)
    heap = [(0.0, source)]
    indptr_l = indptr.tolist()
    indices_l = indices.tolist()
    weights_l = weights.tolist()
    d = dist.tolist()
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for e in range(indptr_l[u], indptr_l[u + 1]):
            v = indices_l[e]
            nd = du + weights_l[e]
            if nd < d[v]:
                d[v] = nd
                heapq.heappush(heap, (nd, v))
    return np.asarray(d)


def _dijkstra_rows(args):
    indptr, indices, weights, n, sources, cols = args
    return np.stack([dijkstra(indptr, indices, weights, s, n)[cols] for s in sources])


def _worker_count(workers):
    if workers is None:
        workers = int(os.environ.get("MORPHKIT_THREADS", "1") or 1)
    if workers == 0:
        workers = os.cpu_count() or 1
    return max(1, workers)


def geodesic_table(graph: HybridGraph, sample_ids, workers: int | None = None) -> GeodesicTable:
    """Dense shortest-path distances among ``sample_ids`` over the full hybrid graph."""
    sample_ids = np.asarray(sample_ids, dtype=np.int64).ravel()
    if not len(sample_ids):
        raise ValueError("empty sample set")
    if len(np.unique(sample_ids)) != len(sample_ids):
        raise ValueError("sample ids must be distinct")
    if sample_ids.min() < 0 or sample_ids.max() >= graph.n:
        raise ValueError("sample id out of range")
    indptr, indices, weights = graph.csr
    workers = _worker_count(workers)
    if workers > 1 and len(sample_ids) >= 4 * workers:
        parts = np.array_split(sample_ids, workers)
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_dijkstra_rows,
                               [(indptr, indices, weights, graph.n, p, sample_ids) for p in parts]))
        dist = np.concatenate(rows)
    else:
        dist = _dijkstra_rows((indptr, indices, weights, graph.n, sample_ids, sample_ids))
    # both directions traverse the same edge multiset; pin exact symmetry against summation order
    dist = np.minimum(dist, dist.T)
    np.fill_diagonal(dist, 0.0)
    n_inf = int(np.isinf(dist).sum())
    if n_inf:
        msg = f"hybrid graph is disconnected: {n_inf // 2} sampled pairs unreachable"
        logger.warning(msg)
        warnings.warn(msg, ConnectivityWarning, stacklevel=2)
    return GeodesicTable(sample_ids, dist)


def farthest_point_sample(mesh_or_points, count: int) -> np.ndarray:
    """Greedy max-min Euclidean subset seeded at vertex 0, returned sorted."""
    pts = mesh_or_points.vertices if isinstance(mesh_or_points, Mesh) else np.asarray(mesh_or_points, float)
    n = len(pts)
    if count > n:
        raise ValueError(f"cannot sample {count} of {n} vertices")
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    if count == n:
        return np.arange(n, dtype=np.int64)
    chosen = [0]
    mind = np.linalg.norm(pts - pts[0], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(mind))  # first maximum -> lowest index on ties
        chosen.append(nxt)
        np.minimum(mind, np.linalg.norm(pts - pts[nxt], axis=1), out=mind)
    return np.sort(np.asarray(chosen, dtype=np.int64))
