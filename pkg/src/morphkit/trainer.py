"""Joint optimization of the feature network (→ Π) and the morph flow."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .correspond import FeatureNet, MeshAggregator, build_pi, vertex_features
from .diffcore import ParamStore, adam_step, philox
from .geomesh import GeodesicTable, Mesh, build_hybrid_graph, farthest_point_sample, geodesic_table
from .losses import (
    LossReport,
    LossWeights,
    directed_edges,
    edge_geodesics,
    loss_align,
    loss_arap,
    loss_geo,
    loss_smooth,
    loss_total,
    report,
    restrict_pi,
)
from .morphflow import DEFAULT_TIMESTEPS, FlowNet, MorphState, compute_morph_state, displacement_field, flow_positions, morph_colors

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "morphkit-checkpoint/1"
# RNG streams: 0 = initialization, 1 = per-iteration timestep draws
_INIT_STREAM, _TIME_STREAM = 0, 1
# changing these would change parameter shapes or the problem itself
_STRUCTURAL = ("hidden", "feat_dim", "flow_width", "geo_samples", "knn", "seed")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 800
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    w_geo: float = 1.0
    w_arap: float = 1.0
    w_smooth: float = 0.1
    w_align: float = 10.0
    geo_samples: int = 500
    knn: int = 8
    sigma: float = 10.0
    hidden: int = 128
    feat_dim: int = 64
    flow_width: int = 128
    arap_draws: int = 4
    arap_dt: float = 0.05
    seed: int = 0
    checkpoint_interval: int = 100

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v}")
        if not 1 <= self.iterations <= 10**6:
            raise ValueError(f"iterations must be in [1, 1000000], got {self.iterations}")
        for name in ("geo_samples", "knn", "hidden", "feat_dim", "flow_width", "arap_draws"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.arap_dt < 1:
            raise ValueError(f"arap_dt must be in (0, 1), got {self.arap_dt}")
        for name, ok in (("lr", self.lr > 0), ("sigma", self.sigma >= 0),
                         ("checkpoint_interval", self.checkpoint_interval >= 0),
                         ("beta1", 0 <= self.beta1 < 1), ("beta2", 0 <= self.beta2 < 1),
                         ("adam_eps", self.adam_eps > 0)):
            if not ok:
                raise ValueError(f"{name} out of range: {getattr(self, name)}")
        for name in ("w_geo", "w_arap", "w_smooth", "w_align"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_geo, self.w_arap, self.w_smooth, self.w_align)


def mesh_hash(mesh: Mesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    if mesh.colors is not None:
        h.update(np.ascontiguousarray(mesh.colors, dtype="<f8").tobytes())
    return h.hexdigest()


def cached_geodesics(mesh: Mesh, k: int, samples: int, cache_dir=None) -> GeodesicTable:
    """Geodesic table over ``samples`` farthest points, cached on disk by content hash."""
    count = min(samples, mesh.n_vertices)
    path = None
    if cache_dir is not None:
        key = hashlib.sha256(f"{mesh_hash(mesh)}:{k}:{count}".encode()).hexdigest()[:32]
        path = Path(cache_dir) / f"geodesic_{key}.npz"
        if path.exists():
            with np.load(path) as z:
                return GeodesicTable(z["sample_ids"], z["dist"])
    ids = farthest_point_sample(mesh, count)
    table = geodesic_table(build_hybrid_graph(mesh, k), ids)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, sample_ids=table.sample_ids, dist=table.dist)
        tmp.replace(path)
    return table


class MeshSide:
    """Per-mesh constants reused every iteration."""

    def __init__(self, mesh: Mesh, cfg: TrainConfig, cache_dir=None):
        self.mesh = mesh
        self.V = mesh.vertices
        self.C = mesh.colors if mesh.colors is not None else np.full((mesh.n_vertices, 3), 0.5)
        self.agg = MeshAggregator(mesh)
        self.table = cached_geodesics(mesh, cfg.knn, cfg.geo_samples, cache_dir)


class Trainer:
    """Holds both networks, one Adam state and the iteration counter.

    ``source`` and ``target`` must already be normalized.
    """

    def __init__(self, source: Mesh, target: Mesh, cfg: TrainConfig = TrainConfig(), cache_dir=None):
        self.cfg = cfg
        self.src = MeshSide(source, cfg, cache_dir)
        self.tgt = MeshSide(target, cfg, cache_dir)
        self.half_edges = directed_edges(source)
        self.edge_dist = edge_geodesics(source)
        self.store = ParamStore()
        rng = philox(cfg.seed, _INIT_STREAM)
        self.feat = FeatureNet.create(self.store, rng, cfg.hidden, cfg.feat_dim, cfg.sigma)
        self.flow = FlowNet.create(self.store, rng, (cfg.flow_width,) * 3)
        self.iteration = 0
        self.history: list[LossReport] = []

    # ------------------------------------------------------------------ forward

    def correspondence(self) -> dc.Tensor:
        fs = vertex_features(self.src.mesh, self.feat, self.src.agg)
        ft = vertex_features(self.tgt.mesh, self.feat, self.tgt.agg)
        return build_pi(fs, ft, self.feat.sigma)

    def timestep_draws(self, iteration: int) -> np.ndarray:
        dt = self.cfg.arap_dt
        rng = philox(self.cfg.seed, _TIME_STREAM, iteration)
        return np.append(rng.uniform(0.0, 1.0 - dt, size=self.cfg.arap_draws), 1.0 - dt)

    def losses(self, iteration: int):
        cfg = self.cfg
        pi = self.correspondence()
        pi_s = restrict_pi(pi, self.src.table.sample_ids, self.tgt.table.sample_ids)
        geo = loss_geo(pi_s, self.src.table, self.tgt.table)

        V_S = dc.Tensor(self.src.V)
        delta = displacement_field(V_S, pi, self.tgt.V)
        ts = self.timestep_draws(iteration)
        arap = None
        for t in ts:
            t_next = min(float(t) + cfg.arap_dt, 1.0)
            term = loss_arap(flow_positions(self.flow, V_S, delta, float(t)),
                             flow_positions(self.flow, V_S, delta, t_next),
                             self.src.mesh, half_edges=self.half_edges)
            arap = term if arap is None else dc.add(arap, term)
        arap = dc.mul(arap, 1.0 / len(ts))

        colors = morph_colors(self.src.C, pi, self.tgt.C, float(ts[0]))
        smooth = loss_smooth(colors, self.src.mesh.edges, self.edge_dist)
        align = loss_align(flow_positions(self.flow, V_S, delta, 1.0), pi, self.tgt.V)
        terms = {"geo": geo, "arap": arap, "smooth": smooth, "align": align}
        return terms, pi

    def step(self) -> LossReport:
        it = self.iteration
        terms, _ = self.losses(it)
        try:
            total = loss_total(terms, self.cfg.weights)
        except FloatingPointError as e:
            raise TrainingDiverged(f"iteration {it}: {e}") from None
        rep = report(it, terms, total)
        if not math.isfinite(rep.total):
            raise TrainingDiverged(f"iteration {it}: total loss is not finite")
        dc.backward(total)
        adam_step(self.store, self.cfg.lr, self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps)
        self.iteration += 1
        self.history.append(rep)
        return rep

    def run(self, until: int | None = None, checkpoint_path=None, callback=None,
            meta: dict | None = None) -> list[LossReport]:
        """Step until ``until`` total iterations (default ``cfg.iterations``).

        ``meta`` is merged into every checkpoint sidecar.
        """
        until = self.cfg.iterations if until is None else until
        every = self.cfg.checkpoint_interval
        while self.iteration < until:
            rep = self.step()
            if callback is not None:
                callback(self, rep)
            if checkpoint_path is not None and every and self.iteration % every == 0:
                self.save_checkpoint(checkpoint_path, meta)
        if checkpoint_path is not None:
            self.save_checkpoint(checkpoint_path, meta)
        return self.history

    # ------------------------------------------------------------------ outputs

    def pi(self) -> np.ndarray:
        return self.correspondence().data

    def morph_state(self, timesteps=DEFAULT_TIMESTEPS) -> MorphState:
        return compute_morph_state(self.flow, self.src.V, self.pi(), self.tgt.V,
                                   self.src.C, self.tgt.C, timesteps)

    def metadata(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "iteration": self.iteration,
            "config": asdict(self.cfg),
            "source_hash": mesh_hash(self.src.mesh),
            "target_hash": mesh_hash(self.tgt.mesh),
        }

    def save_checkpoint(self, path, extra_meta: dict | None = None):
        path = Path(path)
        state = self.store.state_dict()
        state["iteration"] = np.array([float(self.iteration)])
        tmp = path.with_name(path.name + ".tmp")
        dc.save_tensors(tmp, state)
        tmp.replace(path)
        meta = self.metadata()
        meta.update(extra_meta or {})
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def load_checkpoint(self, path):
        state = dc.load_tensors(path)
        self.store.load_state_dict(state)
        self.iteration = int(state["iteration"][0])


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_sidecar(path) -> dict:
    meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise dc.VersionMismatchError(f"checkpoint format {meta.get('format')!r} != {CHECKPOINT_FORMAT!r}")
    return meta


def train(source: Mesh, target: Mesh, cfg: TrainConfig = TrainConfig(), checkpoint_path=None,
          cache_dir=None, callback=None) -> Trainer:
    """Build a trainer on normalized meshes and run ``cfg.iterations`` steps."""
    tr = Trainer(source, target, cfg, cache_dir)
    tr.run(checkpoint_path=checkpoint_path, callback=callback)
    return tr


def resume(checkpoint_path, cfg: TrainConfig, source: Mesh, target: Mesh, cache_dir=None,
           callback=None, run=True) -> Trainer:
    """Reload a checkpoint and continue until ``cfg.iterations`` total iterations.

    The per-iteration random draws are keyed on the iteration index, so a
    resumed run reproduces an uninterrupted one bit for bit.
    """
    meta = read_sidecar(checkpoint_path)
    old = TrainConfig(**meta["config"])
    for name in _STRUCTURAL:
        if getattr(old, name) != getattr(cfg, name):
            raise ValueError(f"cannot resume with changed {name}: {getattr(old, name)} -> {getattr(cfg, name)}")
    changed = {f.name: (getattr(old, f.name), getattr(cfg, f.name)) for f in fields(cfg)
               if getattr(old, f.name) != getattr(cfg, f.name) and f.name != "iterations"}
    if changed:
        logger.info("resuming with changed settings: %s", changed)
    if meta["source_hash"] != mesh_hash(source) or meta["target_hash"] != mesh_hash(target):
        raise ValueError("checkpoint was trained on different input meshes")
    tr = Trainer(source, target, cfg, cache_dir)
    tr.load_checkpoint(checkpoint_path)
    if run:
        tr.run(checkpoint_path=checkpoint_path, callback=callback)
    return tr


__all__ = ["TrainConfig", "Trainer", "TrainingDiverged", "train", "resume"]
