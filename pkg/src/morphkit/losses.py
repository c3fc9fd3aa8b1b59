"""Training objectives: geodesic distortion, ARAP, colour smoothness, alignment.

All terms are mean-normalized (divided by entry / edge / vertex counts) so
the default weights do not depend on mesh resolution.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .geomesh import GeodesicTable, Mesh

SMOOTH_EPS = 1e-4
TERMS = ("geo", "arap", "smooth", "align")


@dataclass(frozen=True)
class LossWeights:
    geo: float = 1.0
    arap: float = 1.0
    smooth: float = 0.1
    align: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    iter: int
    geo: float
    arap: float
    smooth: float
    align: float
    total: float


CSV_HEADER = ("iter", "geo", "arap", "smooth", "align", "total")


def write_loss_csv(path, history, append=False):
    path = Path(path)
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(CSV_HEADER)
        for r in history:
            w.writerow([r.iter] + [repr(float(getattr(r, k))) for k in CSV_HEADER[1:]])


def read_loss_csv(path) -> list[LossReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [LossReport(int(r["iter"]), *(float(r[k]) for k in CSV_HEADER[1:])) for r in rows]


# --------------------------------------------------------------------------- geodesic


def restrict_pi(pi, source_ids, target_ids) -> Tensor:
    """Rows ``source_ids`` and columns ``target_ids`` of Π, renormalized to sum to 1."""
    sub = dc.gather_cols(dc.gather_rows(dc.as_tensor(pi), source_ids), target_ids)
    return dc.div(sub, dc.ops.sum(sub, axis=1, keepdims=True))


def _dist(d):
    return d.dist if isinstance(d, GeodesicTable) else np.asarray(d, dtype=np.float64)


def loss_geo(pi_s, D_S, D_T) -> Tensor:
    """Mean squared entry of ``Π D_T Πᵀ - D_S`` over finite source pairs.

    Unreachable source pairs are masked out; unreachable target pairs are
    capped at the largest finite target distance so the product stays finite.
    """
    DS = _dist(D_S)
    DT = _dist(D_T)
    mask = np.isfinite(DS)
    finite_t = np.isfinite(DT)
    if not finite_t.all():
        DT = np.where(finite_t, DT, DT[finite_t].max() if finite_t.any() else 0.0)
    pi_s = dc.as_tensor(pi_s)
    if pi_s.shape != (DS.shape[0], DT.shape[0]):
        raise ValueError(f"loss_geo: Π shape {pi_s.shape} vs tables {DS.shape} and {DT.shape}")
    recon = dc.matmul(dc.matmul(pi_s, Tensor(DT)), dc.transpose(pi_s))
    resid = dc.mul(dc.sub(recon, Tensor(np.where(mask, DS, 0.0))), Tensor(mask.astype(np.float64)))
    return dc.mul(dc.frobenius_sq(resid), 1.0 / max(int(mask.sum()), 1))


# --------------------------------------------------------------------------- ARAP


def directed_edges(mesh: Mesh) -> np.ndarray:
    """Half-edges ``(i, j)`` for every 1-ring neighbour ``j`` of ``i``, sorted by ``i``."""
    e = mesh.edges
    d = np.concatenate([e, e[:, ::-1]])
    return d[np.lexsort((d[:, 1], d[:, 0]))]


def arap_rotations(V_a, V_b, mesh: Mesh, half_edges=None) -> np.ndarray:
    """Best-fit rotation per vertex mapping its 1-ring edges in ``V_a`` onto ``V_b``."""
    V_a = np.asarray(getattr(V_a, "data", V_a), dtype=np.float64)
    V_b = np.asarray(getattr(V_b, "data", V_b), dtype=np.float64)
    he = directed_edges(mesh) if half_edges is None else half_edges
    i, j = he[:, 0], he[:, 1]
    ea = V_a[i] - V_a[j]
    eb = V_b[i] - V_b[j]
    S = np.zeros((mesh.n_vertices, 3, 3))
    np.add.at(S, i, ea[:, :, None] * eb[:, None, :])
    R = np.tile(np.eye(3), (mesh.n_vertices, 1, 1))
    live = np.abs(S).reshape(len(S), -1).max(axis=1) > 0
    if live.any():
        U, _, Wt = np.linalg.svd(S[live])
        W = np.transpose(Wt, (0, 2, 1))
        Rl = W @ np.transpose(U, (0, 2, 1))
        flip = np.linalg.det(Rl) < 0
        if flip.any():
            W[flip, :, 2] *= -1.0
            Rl[flip] = W[flip] @ np.transpose(U[flip], (0, 2, 1))
        R[live] = Rl
    return R


def loss_arap(V_a, V_b, mesh: Mesh, rotations=None, half_edges=None) -> Tensor:
    """Mean over half-edges of ``|(b_i - b_j) - R_i (a_i - a_j)|^2`` with uniform weights.

    Rotations are fitted from the current values and then held constant, so
    the gradient is that of the energy with frozen rotations.
    """
    he = directed_edges(mesh) if half_edges is None else half_edges
    if rotations is None:
        rotations = arap_rotations(V_a, V_b, mesh, he)
    i, j = he[:, 0], he[:, 1]
    V_a, V_b = dc.as_tensor(V_a), dc.as_tensor(V_b)
    ea = dc.sub(dc.gather_rows(V_a, i), dc.gather_rows(V_a, j))
    eb = dc.sub(dc.gather_rows(V_b, i), dc.gather_rows(V_b, j))
    resid = dc.sub(eb, dc.rotate_rows(ea, np.asarray(rotations)[i]))
    return dc.mul(dc.frobenius_sq(resid), 1.0 / max(len(he), 1))


# --------------------------------------------------------------------------- colour / alignment


def edge_geodesics(mesh: Mesh) -> np.ndarray:
    """Graph geodesic between adjacent vertices; the direct edge is always a shortest path."""
    e = mesh.edges
    return np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)


def loss_smooth(C, edges, edge_dist, eps: float = SMOOTH_EPS) -> Tensor:
    """Mean over adjacency edges of ``|C_i - C_j|^2 / (D_g(i, j) + eps)``."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    w = 1.0 / (np.asarray(edge_dist, dtype=np.float64) + eps)
    C = dc.as_tensor(C)
    diff = dc.sub(dc.gather_rows(C, edges[:, 0]), dc.gather_rows(C, edges[:, 1]))
    weighted = dc.mul(diff, Tensor(np.sqrt(w)[:, None]))
    return dc.mul(dc.frobenius_sq(weighted), 1.0 / max(len(edges), 1))


def loss_align(V_at_1, pi, V_T) -> Tensor:
    """``|V(1) - Π V_T|_F^2 / n``."""
    V1 = dc.as_tensor(V_at_1)
    resid = dc.sub(V1, dc.matmul(dc.as_tensor(pi), dc.as_tensor(V_T)))
    return dc.mul(dc.frobenius_sq(resid), 1.0 / V1.shape[0])


def loss_total(terms: dict, weights: LossWeights):
    """Weighted sum of the four terms; raises on a non-finite term.

    Returns a Tensor when any term is one, otherwise a float.
    """
    for name in TERMS:
        val = getattr(terms[name], "data", terms[name])
        if not np.all(np.isfinite(val)):
            raise FloatingPointError(f"loss term {name} is not finite: {float(np.ravel(val)[0])}")
    if any(isinstance(terms[k], Tensor) for k in TERMS):
        total = dc.mul(terms[TERMS[0]], getattr(weights, TERMS[0]))
        for name in TERMS[1:]:
            total = dc.add(total, dc.mul(terms[name], getattr(weights, name)))
        return total
    return sum(getattr(weights, k) * float(terms[k]) for k in TERMS)


def report(it: int, terms: dict, total) -> LossReport:
    val = lambda x: float(x.item() if isinstance(x, Tensor) else x)  # noqa: E731
    return LossReport(it, *(val(terms[k]) for k in TERMS), val(total))


__all__ = [
    "LossWeights", "LossReport", "loss_geo", "loss_arap", "loss_smooth", "loss_align", "loss_total",
    "restrict_pi", "arap_rotations", "directed_edges", "edge_geodesics", "write_loss_csv",
    "read_loss_csv", "report",
]
