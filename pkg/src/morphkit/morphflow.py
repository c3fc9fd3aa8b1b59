"""Time-conditioned deformation of the source mesh towards its correspondents."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor, kaiming_uniform
from .geomesh import Mesh, Normalization
from .gsplat import GaussianSet, save_gaussians, update_gaussian_positions
from .io import write_obj

DEFAULT_TIMESTEPS = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))
MANIFEST = "manifest.txt"


@dataclass
class FlowNet:
    """Per-vertex MLP on ``[position, displacement, t]``; output is scaled by ``t``."""

    store: ParamStore
    widths: tuple = (128, 128, 128)
    slope: float = 0.01
    prefix: str = "flow"

    @classmethod
    def create(cls, store: ParamStore, rng: np.random.Generator, widths=(128, 128, 128),
               prefix="flow") -> "FlowNet":
        dims = [7, *widths, 3]
        for k in range(len(dims) - 1):
            store.add(f"{prefix}.{k}.weight", kaiming_uniform(rng, dims[k], dims[k + 1]))
            store.add(f"{prefix}.{k}.bias", np.zeros((1, dims[k + 1])))
        return cls(store, tuple(widths), prefix=prefix)

    @cached_property
    def layers(self):
        return [(self.store[f"{self.prefix}.{k}.weight"], self.store[f"{self.prefix}.{k}.bias"])
                for k in range(len(self.widths) + 1)]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            h = dc.add(dc.matmul(h, W), b)
            if k < last:
                h = dc.leaky_relu(h, self.slope)
        return h


def displacement_field(V_S, pi, V_T):
    """``Π V_T - V_S``; a Tensor if any argument is one, else an ndarray."""
    if any(isinstance(a, Tensor) for a in (V_S, pi, V_T)):
        return dc.sub(dc.matmul(pi, V_T), V_S)
    return np.asarray(pi, float) @ np.asarray(V_T, float) - np.asarray(V_S, float)


def _check_t(t):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")


def flow_positions(net: FlowNet, V_S, delta, t: float) -> Tensor:
    """``V_S + t * MLP([V_S, delta, t])`` for a precomputed displacement field."""
    _check_t(t)
    V_S = dc.as_tensor(V_S)
    n = V_S.shape[0]
    x = dc.concat_cols([V_S, dc.as_tensor(delta), Tensor(np.full((n, 1), float(t)))])
    return dc.add(V_S, dc.mul(net(x), float(t)))


def morph_positions(net: FlowNet, V_S, pi, V_T, t: float) -> Tensor:
    _check_t(t)
    return flow_positions(net, V_S, displacement_field(dc.as_tensor(V_S), dc.as_tensor(pi), V_T), t)


def morph_colors(C_S, pi, C_T, t: float):
    """``(1 - t) C_S + t Π C_T``.

    With a Tensor ``pi`` the result is a differentiable Tensor (no clamp is
    needed: the blend of [0, 1] colours under a row-stochastic Π stays in
    range); otherwise an ndarray clamped to [0, 1].
    """
    _check_t(t)
    if isinstance(pi, Tensor):
        return dc.add(dc.mul(dc.as_tensor(C_S), 1.0 - t), dc.mul(dc.matmul(pi, C_T), t))
    if t == 0.0:
        return np.clip(np.asarray(C_S, float), 0.0, 1.0)
    out = (1.0 - t) * np.asarray(C_S, float) + t * (np.asarray(pi, float) @ np.asarray(C_T, float))
    return np.clip(out, 0.0, 1.0)


@dataclass
class MorphState:
    timesteps: np.ndarray   # (T,) strictly increasing, first 0 and last 1
    positions: np.ndarray   # (T, n, 3)
    colors: np.ndarray      # (T, n, 3)

    def __post_init__(self):
        ts = np.asarray(self.timesteps, dtype=np.float64)
        if ts[0] != 0.0 or ts[-1] != 1.0 or np.any(np.diff(ts) <= 0):
            raise ValueError("timesteps must increase strictly from 0 to 1")
        self.timesteps = ts


def compute_morph_state(net: FlowNet, V_S, pi, V_T, C_S, C_T, timesteps=DEFAULT_TIMESTEPS) -> MorphState:
    V_S = np.asarray(V_S, dtype=np.float64)
    pi = np.asarray(getattr(pi, "data", pi), dtype=np.float64)
    delta = displacement_field(V_S, pi, V_T)
    pos, col = [], []
    for t in timesteps:
        # t = 0 is exact by construction; skip the network so no rounding creeps in
        pos.append(V_S.copy() if t == 0 else flow_positions(net, V_S, delta, float(t)).data)
        col.append(morph_colors(C_S, pi, C_T, float(t)))
    return MorphState(np.asarray(timesteps, dtype=np.float64), np.stack(pos), np.stack(col))


def frame_name(k: int, ext: str) -> str:
    return f"frame_{k:03d}.{ext}"


def write_manifest(out_dir, timesteps, ext="obj"):
    lines = ["# frame t"] + [f"{frame_name(k, ext)} {float(t)!r}" for k, t in enumerate(timesteps)]
    (Path(out_dir) / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path):
    """Return ``[(filename, t), ...]`` from a manifest file."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            name, t = line.split()
            out.append((name, float(t)))
    return out


def export_sequence(state: MorphState, mesh: Mesh, out_dir, gs: GaussianSet | None = None,
                    transform: Normalization | None = None) -> list[Path]:
    """Write ``frame_%03d.obj`` (and ``.ply`` for bound Gaussians) plus a manifest.

    ``state``, ``mesh`` and ``gs`` live in the normalized frame; ``transform``
    maps them back to the original frame on write.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, (V, C) in enumerate(zip(state.positions, state.colors)):
        Vo = transform.invert(V) if transform is not None else V
        path = out_dir / frame_name(k, "obj")
        write_obj(path, Vo, mesh.faces, C)
        written.append(path)
        if gs is not None:
            g = gs.with_positions(update_gaussian_positions(gs, V))
            if transform is not None:
                s, c = transform.scale, np.asarray(transform.center)
                g = g.similarity_transformed(1.0 / s, -c * s)
            p = out_dir / frame_name(k, "ply")
            save_gaussians(p, g, include_binding=False)
            written.append(p)
    write_manifest(out_dir, state.timesteps)
    return written
