"""Sequence metrics: SSIM-trajectory error, CIELAB colour drift and edge integrity."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .render import BACKGROUND, Image, to_grayscale

SSIM_WIN = 11
SSIM_SIGMA = 1.5
C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2
CANNY_LOW, CANNY_HIGH = 50.0, 150.0

# linear sRGB -> XYZ, D65
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_D65 = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0

_EIGHT = np.ones((3, 3), dtype=bool)


class NoForegroundWarning(UserWarning):
    pass


def _gray(x) -> np.ndarray:
    return to_grayscale(x) if isinstance(x, Image) else np.asarray(x, dtype=np.float64)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = (size - 1) / 2.0
    x = np.arange(size) - r
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _filter_valid(img, k1d):
    """Separable correlation keeping only fully covered windows."""
    n = len(k1d)
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=0) @ k1d
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=1) @ k1d


def ssim(img_a, img_b) -> float:
    """Mean SSIM over all 11x11 Gaussian windows lying inside the image (8-bit range)."""
    a, b = _gray(img_a), _gray(img_b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: dimension mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WIN:
        raise ValueError(f"ssim: images must be at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape}")
    k = gaussian_kernel(SSIM_WIN, SSIM_SIGMA)
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a ** 2
    var_b = _filter_valid(b * b, k) - mu_b ** 2
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))


def _check_sequence(frames, timesteps, minimum=3):
    if len(frames) < minimum:
        raise ValueError(f"sequence has {len(frames)} frames; need >= {minimum} (< {minimum} frames)")
    if timesteps is not None:
        ts = np.asarray(timesteps, dtype=np.float64)
        if len(ts) != len(frames):
            raise ValueError(f"{len(frames)} frames but {len(ts)} timesteps")
        return ts
    return np.linspace(0.0, 1.0, len(frames))


def ssim_curves(frames):
    """``ssim(A, G_k)`` and ``ssim(G_k, B)`` for every frame, A and B the endpoints."""
    g = [_gray(f) for f in frames]
    return np.array([ssim(g[0], x) for x in g]), np.array([ssim(x, g[-1]) for x in g])


def mse_ssim_trajectory(frames, timesteps=None, curves=None) -> float:
    """Mean over interior frames of ``(1-t - ssim(A,G_t))^2 + (t - ssim(G_t,B))^2``."""
    ts = _check_sequence(frames, timesteps)
    sa, sb = ssim_curves(frames) if curves is None else curves
    inner = slice(1, len(frames) - 1)
    err = (1.0 - ts[inner] - sa[inner]) ** 2 + (ts[inner] - sb[inner]) ** 2
    return float(err.mean())


def rgb_to_lab(rgb) -> np.ndarray:
    """8-bit sRGB (``(..., 3)``) to CIELAB under D65."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = (lin @ _RGB_TO_XYZ.T) / _D65
    f = np.where(xyz > _DELTA ** 3, np.cbrt(xyz), xyz / (3 * _DELTA ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def delta_e(rgb1, rgb2) -> np.ndarray:
    """CIE76 colour difference between 8-bit sRGB colours."""
    return np.linalg.norm(rgb_to_lab(rgb1) - rgb_to_lab(rgb2), axis=-1)


def foreground(img: Image) -> np.ndarray:
    return np.any(img.pixels != BACKGROUND, axis=-1)


def _pair_mean(a: Image, b: Image) -> float:
    mask = foreground(a) | foreground(b)
    return float(delta_e(a.pixels[mask], b.pixels[mask]).mean())


@dataclass
class DeltaEReport:
    source: np.ndarray     # per frame, nan where excluded
    target: np.ndarray
    previous: np.ndarray   # nan for the first frame
    delta_e_avg: float


def delta_e_suite(frames) -> DeltaEReport:
    """Per-frame mean ΔE against the source frame, the target frame and the previous frame.

    A pair is compared over the union of both frames' non-background pixels.
    Frames without foreground are excluded with a warning.
    """
    if len(frames) < 2:
        raise ValueError(f"delta_e_suite needs >= 2 frames, got {len(frames)}")
    n = len(frames)
    fg = [bool(foreground(f).any()) for f in frames]
    for k in range(n):
        if not fg[k]:
            warnings.warn(f"frame {k} has no foreground pixels; excluded from ΔE", NoForegroundWarning, stacklevel=2)
    src, tgt, prev = (np.full(n, np.nan) for _ in range(3))
    for k in range(n):
        if not fg[k]:
            continue
        src[k] = _pair_mean(frames[k], frames[0])
        tgt[k] = _pair_mean(frames[k], frames[-1])
        if k > 0 and fg[k - 1]:
            prev[k] = _pair_mean(frames[k], frames[k - 1])
    parts = [np.nanmean(x) if np.isfinite(x).any() else 0.0 for x in (src, tgt, prev)]
    return DeltaEReport(src, tgt, prev, float(sum(parts) / 3.0))


def canny(img, t_low: float = CANNY_LOW, t_high: float = CANNY_HIGH) -> np.ndarray:
    """Binary edge map (uint8 0/1) of a grayscale image.

    Blur 5x5 (sigma 1.4), Sobel, 4-direction non-maximum suppression and
    8-connected hysteresis. On a plateau of equal magnitudes across the edge
    the pixel on the lower-index side survives, so edges stay one pixel wide.
    """
    if not t_low < t_high:
        raise ValueError(f"canny: need t_low < t_high, got {t_low}, {t_high}")
    g = _gray(img)
    k = gaussian_kernel(5, 1.4)
    g = ndimage.correlate1d(ndimage.correlate1d(g, k, axis=0, mode="nearest"), k, axis=1, mode="nearest")
    gx = ndimage.sobel(g, axis=1, mode="nearest")
    gy = ndimage.sobel(g, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)

    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = np.zeros(g.shape, dtype=np.int8)            # 0: horizontal gradient
    sector[(ang >= 22.5) & (ang < 67.5)] = 1              # down-right diagonal
    sector[(ang >= 67.5) & (ang < 112.5)] = 2             # vertical gradient
    sector[(ang >= 112.5) & (ang < 157.5)] = 3            # down-left diagonal
    pad = np.pad(mag, 1)
    H, W = g.shape

    def shifted(dr, dc):
        return pad[1 + dr:1 + dr + H, 1 + dc:1 + dc + W]

    keep = np.zeros(g.shape, dtype=bool)
    for s, (dr, dc) in enumerate([(0, 1), (1, 1), (1, 0), (1, -1)]):
        fwd, back = shifted(dr, dc), shifted(-dr, -dc)
        keep |= (sector == s) & (mag >= fwd) & (mag > back)
    nms = np.where(keep, mag, 0.0)

    weak = nms >= t_low
    strong = nms >= t_high
    labels, count = ndimage.label(weak, structure=_EIGHT)
    if count == 0:
        return np.zeros(g.shape, dtype=np.uint8)
    alive = np.zeros(count + 1, dtype=bool)
    alive[np.unique(labels[strong])] = True
    alive[0] = False
    return alive[labels].astype(np.uint8)


def edge_components(edges) -> int:
    return int(ndimage.label(np.asarray(edges) > 0, structure=_EIGHT)[1])


def edge_integrity(img, t_low: float = CANNY_LOW, t_high: float = CANNY_HIGH) -> int:
    """Connected edge components minus one, clamped at zero."""
    return max(edge_components(canny(img, t_low, t_high)) - 1, 0)


@dataclass
class MetricReport:
    mse_ssim: float
    delta_e_avg: float
    ei_mean: float
    timesteps: np.ndarray = field(repr=False)
    ssim_a: np.ndarray = field(repr=False)
    ssim_b: np.ndarray = field(repr=False)
    delta_e_src: np.ndarray = field(repr=False)
    delta_e_tgt: np.ndarray = field(repr=False)
    delta_e_prev: np.ndarray = field(repr=False)
    ei: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {"frames": len(self.timesteps), "mse_ssim": self.mse_ssim,
                "delta_e_avg": self.delta_e_avg, "ei_mean": self.ei_mean}


def evaluate_sequence(frames, timesteps=None, thresholds=(CANNY_LOW, CANNY_HIGH)) -> MetricReport:
    ts = _check_sequence(frames, timesteps)
    shapes = {f.pixels.shape if isinstance(f, Image) else np.shape(f) for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"frames have inconsistent sizes: {sorted(shapes)}")
    curves = ssim_curves(frames)
    mse = mse_ssim_trajectory(frames, ts, curves)
    de = delta_e_suite(frames)
    ei = np.array([edge_integrity(f, *thresholds) for f in frames], dtype=np.float64)
    return MetricReport(mse, de.delta_e_avg, float(ei.mean()), ts, curves[0], curves[1],
                        de.source, de.target, de.previous, ei)


CSV_HEADER = ("frame", "t", "ssim_A", "ssim_B", "deltaE_src", "deltaE_tgt", "deltaE_prev", "EI")


def _fmt(x) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def write_report_csv(path, rep: MetricReport):
    """Per-frame rows followed by a ``# summary`` comment line."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k, t in enumerate(rep.timesteps):
            w.writerow([k, _fmt(t), _fmt(rep.ssim_a[k]), _fmt(rep.ssim_b[k]), _fmt(rep.delta_e_src[k]),
                        _fmt(rep.delta_e_tgt[k]), _fmt(rep.delta_e_prev[k]), int(rep.ei[k])])
        fh.write("# summary " + " ".join(f"{k}={_fmt(v) if isinstance(v, float) else v}"
                                          for k, v in rep.summary().items()) + "\n")


def write_summary(path, rep: MetricReport):
    lines = [f"{k} = {_fmt(v) if isinstance(v, float) else v}" for k, v in rep.summary().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
