"""Synthetic shape pairs with known vertex correspondence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geomesh import Mesh, save_mesh

KINDS = ("translate", "rotate", "ellipsoid-scale", "bend", "twist")

# one solid colour per octant, indexed by (x >= 0) + 2 (y >= 0) + 4 (z >= 0)
OCTANT_COLORS = np.array([
    [0.90, 0.10, 0.10],
    [0.10, 0.70, 0.20],
    [0.15, 0.25, 0.90],
    [0.95, 0.80, 0.10],
    [0.60, 0.15, 0.75],
    [0.10, 0.75, 0.80],
    [0.95, 0.50, 0.10],
    [0.35, 0.35, 0.35],
])


@dataclass(frozen=True, eq=False)
class SynthPair:
    source: Mesh
    target: Mesh
    gt_map: np.ndarray
    tag: str

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"source": out / "source.obj", "target": out / "target.obj", "gt_map": out / "gt_map.txt"}
        save_mesh(paths["source"], self.source)
        save_mesh(paths["target"], self.target)
        paths["gt_map"].write_text("".join(f"{int(k)}\n" for k in self.gt_map), encoding="utf-8")
        return paths


def read_gt_map(path) -> np.ndarray:
    return np.array([int(x) for x in Path(path).read_text(encoding="utf-8").split()], dtype=np.int64)


def make_icosphere(subdivisions: int = 2, radius: float = 1.0) -> Mesh:
    """Icosahedron split ``subdivisions`` times (each triangle into 4), projected to the sphere."""
    if not 0 <= subdivisions <= 6:
        raise ValueError(f"subdivisions must be in [0, 6], got {subdivisions}")
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.stack(verts) * radius
    return Mesh(v, np.asarray(faces, dtype=np.int64))


def octant_colors(points, center=None) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    c = p.mean(axis=0) if center is None else np.asarray(center, dtype=np.float64)
    q = p - c
    idx = (q[:, 0] >= 0).astype(int) + 2 * (q[:, 1] >= 0) + 4 * (q[:, 2] >= 0)
    return OCTANT_COLORS[idx]


def rotation_z(degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _vec(magnitude, default_axis):
    m = np.atleast_1d(np.asarray(magnitude, dtype=np.float64))
    if m.size == 1:
        return default_axis(float(m[0]))
    if m.size != 3:
        raise ValueError(f"expected a scalar or 3-vector magnitude, got {magnitude!r}")
    return m


def deform(points, kind: str, magnitude) -> np.ndarray:
    """Apply one of the analytic deformations in :data:`KINDS` to ``points``."""
    p = np.asarray(points, dtype=np.float64)
    if kind == "translate":
        return p + _vec(magnitude, lambda m: np.array([m, 0.0, 0.0]))
    if kind == "rotate":
        return p @ rotation_z(float(magnitude)).T
    if kind == "ellipsoid-scale":
        return p * _vec(magnitude, lambda m: np.array([1.0, 1.0, m]))
    z = p[:, 2]
    zmin, zmax = z.min(), z.max()
    height = zmax - zmin
    if kind == "twist":
        theta = math.radians(float(magnitude)) * (z - zmin) / height
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([c * p[:, 0] - s * p[:, 1], s * p[:, 0] + c * p[:, 1], z], axis=1)
    if kind == "bend":
        # Barr bend about the y axis: the z axis is wrapped onto an arc of the given total angle
        angle = math.radians(float(magnitude))
        if angle == 0.0:
            return p.copy()
        k = angle / height
        zc = 0.5 * (zmin + zmax)
        theta = k * (z - zc)
        r = 1.0 / k - p[:, 0]
        return np.stack([1.0 / k - r * np.cos(theta), p[:, 1], zc + r * np.sin(theta)], axis=1)
    raise ValueError(f"unknown deformation kind {kind!r}; expected one of {', '.join(KINDS)}")


def deform_pair(base: Mesh, kind: str, magnitude) -> SynthPair:
    """Target is the analytic deformation of ``base``; correspondence is the identity."""
    target_v = deform(base.vertices, kind, magnitude)
    colors = octant_colors(base.vertices)
    src = Mesh(base.vertices, base.faces, colors)
    tgt = Mesh(target_v, base.faces, colors)
    mag = np.atleast_1d(np.asarray(magnitude, dtype=np.float64))
    tag = f"{kind}:{','.join(repr(float(x)) for x in mag)}"
    return SynthPair(src, tgt, np.arange(base.n_vertices, dtype=np.int64), tag)
