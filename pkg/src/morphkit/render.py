"""Orthographic z-buffer rasterizer with per-vertex colours and PPM output."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geomesh import Mesh

BACKGROUND = 255


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit RGB, row-major with the origin at the top-left pixel."""

    width: int
    height: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if px.size != 3 * self.width * self.height:
            raise ValueError(f"pixel buffer has {px.size} bytes, expected {3 * self.width * self.height}")
        px = px.reshape(self.height, self.width, 3)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @classmethod
    def blank(cls, width: int, height: int) -> "Image":
        return cls(width, height, np.full((height, width, 3), BACKGROUND, dtype=np.uint8))

    def __eq__(self, other):
        return isinstance(other, Image) and self.pixels.shape == other.pixels.shape \
            and bool(np.array_equal(self.pixels, other.pixels))


@dataclass(frozen=True)
class Camera:
    view: tuple = (0.0, 0.0, -1.0)
    up: tuple = (0.0, 1.0, 0.0)
    half_extent: float = 0.65
    width: int = 256
    height: int = 256

    def __post_init__(self):
        f = np.asarray(self.view, dtype=np.float64)
        u = np.asarray(self.up, dtype=np.float64)
        if f.shape != (3,) or u.shape != (3,):
            raise ValueError("view and up must be 3-vectors")
        if np.linalg.norm(f) == 0 or np.linalg.norm(np.cross(f, u)) <= 1e-12 * np.linalg.norm(f) * np.linalg.norm(u):
            raise ValueError("view and up must be non-zero and non-parallel")
        if not self.half_extent > 0:
            raise ValueError(f"half_extent must be > 0, got {self.half_extent}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def basis(self):
        """Orthonormal (right, up, forward) with forward along the view direction."""
        f = np.asarray(self.view, dtype=np.float64)
        f = f / np.linalg.norm(f)
        r = np.cross(f, np.asarray(self.up, dtype=np.float64))
        r /= np.linalg.norm(r)
        return r, np.cross(r, f), f

    def project(self, points) -> np.ndarray:
        """Pixel coordinates ``(x, y)`` plus depth along the view direction."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        r, u, f = self.basis()
        h = self.half_extent
        x = (p @ r + h) * (self.width / (2.0 * h))
        y = (h - p @ u) * (self.height / (2.0 * h))
        return np.stack([x, y, p @ f], axis=1)


def _to_bytes(colors) -> np.ndarray:
    return np.floor(np.clip(colors, 0.0, 1.0) * 255.0 + 0.5)


def rasterize(mesh_or_positions, camera: Camera = Camera(), faces=None, colors=None) -> Image:
    """Render vertex-coloured triangles; nearest surface wins, ties keep the earlier face.

    Pixel centres sit at half-integer coordinates. A centre exactly on a shared
    edge belongs to the triangle for which that edge is a top or left edge.
    """
    if isinstance(mesh_or_positions, Mesh):
        V, F = mesh_or_positions.vertices, mesh_or_positions.faces
        C = mesh_or_positions.colors if colors is None else colors
    else:
        V, F, C = mesh_or_positions, faces, colors
    W, H = camera.width, camera.height
    rgb = np.full((H, W, 3), float(BACKGROUND))
    zbuf = np.full((H, W), np.inf)
    F = np.zeros((0, 3), np.int64) if F is None else np.asarray(F, dtype=np.int64).reshape(-1, 3)
    if len(F) == 0:
        return Image(W, H, rgb.astype(np.uint8))
    V = np.asarray(V, dtype=np.float64)
    C = np.full((len(V), 3), 0.5) if C is None else np.asarray(C, dtype=np.float64)
    scr = camera.project(V)
    cols = _to_bytes(C)
    for tri in F:
        p = scr[tri]
        area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if area == 0.0:
            continue
        if area < 0:
            tri = tri[[0, 2, 1]]
            p = scr[tri]
            area = -area
        x0 = max(int(np.floor(p[:, 0].min() - 0.5)), 0)
        x1 = min(int(np.ceil(p[:, 0].max() - 0.5)), W - 1)
        y0 = max(int(np.floor(p[:, 1].min() - 0.5)), 0)
        y1 = min(int(np.ceil(p[:, 1].max() - 0.5)), H - 1)
        if x0 > x1 or y0 > y1:
            continue
        px = np.arange(x0, x1 + 1) + 0.5
        py = (np.arange(y0, y1 + 1) + 0.5)[:, None]
        inside = np.ones((len(py), len(px)), dtype=bool)
        w = []
        for k in range(3):
            a, b = p[(k + 1) % 3], p[(k + 2) % 3]
            dx, dy = b[0] - a[0], b[1] - a[1]
            # evaluate from the lexicographically smaller endpoint so a shared
            # edge yields exactly opposite values in its two triangles
            if (a[0], a[1]) <= (b[0], b[1]):
                e = dx * (py - a[1]) - dy * (px - a[0])
            else:
                e = -((-dx) * (py - b[1]) - (-dy) * (px - b[0]))
            top_left = dy < 0 or (dy == 0 and dx > 0)
            inside &= (e > 0) | ((e == 0) & top_left)
            w.append(e)
        if not inside.any():
            continue
        lam = np.stack(w, axis=-1) / area
        z = lam @ p[:, 2]
        sub = zbuf[y0:y1 + 1, x0:x1 + 1]
        win = inside & (z < sub)
        sub[win] = z[win]
        rgb[y0:y1 + 1, x0:x1 + 1][win] = lam[win] @ cols[tri]
    return Image(W, H, np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8))


def write_image(img: Image, path):
    path = Path(path)
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    path.write_bytes(header + img.pixels.tobytes())


_HEADER = re.compile(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_image(path) -> Image:
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if m is None:
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    body = data[m.end():]
    if len(body) != 3 * w * h:
        raise ValueError(f"{path}: expected {3 * w * h} pixel bytes at offset {m.end()}, found {len(body)}")
    return Image(w, h, np.frombuffer(body, dtype=np.uint8))


def to_grayscale(img: Image) -> np.ndarray:
    """Integer luma ``0.299 R + 0.587 G + 0.114 B`` rounded half-up."""
    p = img.pixels.astype(np.int64)
    return ((299 * p[..., 0] + 587 * p[..., 1] + 114 * p[..., 2] + 500) // 1000).astype(np.float64)


def frame_path(out_dir, k: int) -> Path:
    return Path(out_dir) / f"frame_{k:03d}.ppm"
