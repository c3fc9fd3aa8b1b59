"""Graph-convolutional vertex features and the soft correspondence matrix."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor, kaiming_uniform
from .geomesh import GeodesicTable, Mesh

N_LAYERS = 5


class MeshAggregator:
    """Mean over ``{self} ∪ 1-ring`` as a gather followed by a scatter-mean.

    Pairs are ordered by destination then source so the reduction order is fixed.
    """

    def __init__(self, mesh: Mesh):
        n = mesh.n_vertices
        e = mesh.edges
        dst = np.concatenate([np.arange(n), e[:, 0], e[:, 1]])
        src = np.concatenate([np.arange(n), e[:, 1], e[:, 0]])
        order = np.lexsort((src, dst))
        self.n = n
        self.src = src[order]
        self.dst = dst[order]

    def __call__(self, x: Tensor) -> Tensor:
        return dc.scatter_mean_rows(dc.gather_rows(x, self.src), self.dst, self.n)


def vertex_inputs(mesh: Mesh) -> np.ndarray:
    """Per-vertex network input: position (3) and unit normal (3)."""
    return np.concatenate([mesh.vertices, mesh.normals], axis=1)


@dataclass
class FeatureNet:
    """Five graph-conv layers; hidden width ``hidden``, output width ``out_dim``."""

    store: ParamStore
    hidden: int = 128
    out_dim: int = 64
    sigma: float = 10.0
    slope: float = 0.01
    prefix: str = "feat"

    @classmethod
    def create(cls, store: ParamStore, rng: np.random.Generator, hidden=128, out_dim=64,
               sigma=10.0, in_dim=6, prefix="feat") -> "FeatureNet":
        dims = [in_dim] + [hidden] * (N_LAYERS - 1) + [out_dim]
        for k in range(N_LAYERS):
            store.add(f"{prefix}.{k}.weight", kaiming_uniform(rng, dims[k], dims[k + 1]))
            store.add(f"{prefix}.{k}.bias", np.zeros((1, dims[k + 1])))
        return cls(store, hidden, out_dim, sigma, prefix=prefix)

    @cached_property
    def layers(self):
        return [(self.store[f"{self.prefix}.{k}.weight"], self.store[f"{self.prefix}.{k}.bias"])
                for k in range(N_LAYERS)]


def vertex_features(mesh: Mesh, net: FeatureNet, aggregator: MeshAggregator | None = None) -> Tensor:
    """``n x D`` L2-normalized vertex features (differentiable w.r.t. ``net``)."""
    agg = aggregator or MeshAggregator(mesh)
    h = Tensor(vertex_inputs(mesh))
    for k, (W, b) in enumerate(net.layers):
        h = dc.add(dc.matmul(agg(h), W), b)
        if k < N_LAYERS - 1:
            h = dc.leaky_relu(h, net.slope)
    return dc.l2_normalize_rows(h)


def build_pi(feat_s, feat_t, sigma: float) -> Tensor:
    """Row-stochastic ``exp(sigma * cos) / sum_k exp(sigma * cos_k)`` over target vertices."""
    sim = dc.matmul(dc.as_tensor(feat_s), dc.transpose(dc.as_tensor(feat_t)))
    return dc.softmax_rows(sim, scale=sigma)


@dataclass(frozen=True, eq=False)
class Correspondence:
    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=np.float64))

    @property
    def shape(self):
        return self.pi.shape

    def argmax(self, columns=None) -> np.ndarray:
        """Best target per source row; ties resolve to the lowest column."""
        p = self.pi if columns is None else self.pi[:, columns]
        return np.argmax(p, axis=1)

    def save(self, path):
        dc.save_tensors(path, {"pi": self.pi})

    @classmethod
    def load(cls, path) -> "Correspondence":
        return cls(dc.load_tensors(path)["pi"])


def correspondence_accuracy(pi, gt_map, target_table: GeodesicTable, source_ids=None) -> float:
    """Mean target geodesic distance between the argmax match and the true match.

    Argmax is taken over the columns in ``target_table.sample_ids``; rows default
    to every source vertex whose ground-truth target is in that set.
    """
    pi = pi.pi if isinstance(pi, Correspondence) else np.asarray(getattr(pi, "data", pi))
    gt_map = np.asarray(gt_map, dtype=np.int64)
    cols = target_table.sample_ids
    in_set = np.isin(gt_map, cols)
    if source_ids is None:
        source_ids = np.nonzero(in_set)[0]
    source_ids = np.asarray(source_ids, dtype=np.int64)
    if not len(source_ids):
        raise ValueError("no source vertex has a ground-truth target in the sampled set")
    if not in_set[source_ids].all():
        raise ValueError("ground truth of some source rows lies outside the sampled target set")
    best = np.argmax(pi[source_ids][:, cols], axis=1)  # position within cols
    true = target_table.index_of(gt_map[source_ids])
    return float(target_table.dist[best, true].mean())
