"""Flat ``key = value`` configuration driven by a single schema.

The same schema validates config files, generates CLI override flags and
feeds ``--help``, so the three never drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

from .metrics import CANNY_HIGH, CANNY_LOW
from .render import Camera
from .trainer import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = "".join([f" key={key}" if key else "", f" line={line}" if line else ""])
        super().__init__(f"{message}{where}")
        self.key = key
        self.line = line


@dataclass(frozen=True)
class Key:
    name: str
    kind: type          # int, float or "vec3"
    default: object
    help: str
    group: str


def _vec3(text: str) -> tuple:
    parts = [p for p in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError(f"expected 3 comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


_TRAIN_HELP = {
    "iterations": "optimization steps (total, including resumed ones)",
    "lr": "Adam learning rate",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "adam_eps": "Adam epsilon",
    "w_geo": "weight of the geodesic distortion loss",
    "w_arap": "weight of the ARAP loss",
    "w_smooth": "weight of the colour smoothness loss",
    "w_align": "weight of the alignment loss",
    "geo_samples": "farthest-point samples per mesh for geodesic tables",
    "knn": "k nearest neighbours in the hybrid graph",
    "sigma": "softmax sharpness of the correspondence",
    "hidden": "feature network hidden width",
    "feat_dim": "feature dimension",
    "flow_width": "flow network hidden width",
    "arap_draws": "random timesteps per iteration for ARAP",
    "arap_dt": "ARAP timestep offset",
    "seed": "random seed",
    "checkpoint_interval": "iterations between checkpoints (0 = final only)",
}


def _schema() -> list[Key]:
    keys = []
    for f in fields(TrainConfig):
        kind = int if isinstance(f.default, int) else float
        keys.append(Key(f.name, kind, f.default, _TRAIN_HELP[f.name], "train"))
    cam = Camera()
    keys += [
        Key("camera_view", "vec3", cam.view, "camera view direction", "render"),
        Key("camera_up", "vec3", cam.up, "camera up vector", "render"),
        Key("camera_half_extent", float, cam.half_extent, "half width of the visible square", "render"),
        Key("image_width", int, cam.width, "image width in pixels", "render"),
        Key("image_height", int, cam.height, "image height in pixels", "render"),
        Key("canny_low", float, CANNY_LOW, "Canny low threshold", "metrics"),
        Key("canny_high", float, CANNY_HIGH, "Canny high threshold", "metrics"),
    ]
    return keys


SCHEMA: dict[str, Key] = {k.name: k for k in _schema()}


def convert(key: Key, text: str, line=None):
    try:
        if key.kind == "vec3":
            val = _vec3(text)
        elif key.kind is int:
            val = int(text, 10)
        else:
            val = float(text)
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for {key.kind if isinstance(key.kind, str) else key.kind.__name__}",
                          key.name, line) from None
    if any(not math.isfinite(v) for v in (val if isinstance(val, tuple) else (val,))):
        raise ConfigError(f"value {text!r} is not finite", key.name, line)
    return val


@dataclass
class Config:
    values: dict
    lines: dict          # key -> source line (None for defaults and overrides)

    @classmethod
    def defaults(cls) -> "Config":
        return cls({k: v.default for k, v in SCHEMA.items()}, {})

    def __getitem__(self, name):
        return self.values[name]

    def set(self, name: str, value, line=None):
        if name not in SCHEMA:
            raise ConfigError("unknown key", name, line)
        if isinstance(value, str):
            value = convert(SCHEMA[name], value, line)
        self.values[name] = value
        self.lines[name] = line

    def train_config(self) -> TrainConfig:
        kw = {f.name: self.values[f.name] for f in fields(TrainConfig)}
        try:
            return TrainConfig(**kw)
        except ValueError as e:
            first = str(e).split()[0] if str(e) else ""
            key = first if first in SCHEMA else None
            raise ConfigError(str(e), key, self.lines.get(key)) from None

    def camera(self) -> Camera:
        try:
            return Camera(self["camera_view"], self["camera_up"], self["camera_half_extent"],
                          self["image_width"], self["image_height"])
        except ValueError as e:
            raise ConfigError(str(e), "camera_view") from None

    def thresholds(self) -> tuple:
        lo, hi = self["canny_low"], self["canny_high"]
        if not lo < hi:
            raise ConfigError("canny_low must be < canny_high", "canny_low", self.lines.get("canny_low"))
        return lo, hi

    def dumps(self) -> str:
        out = []
        for name, key in SCHEMA.items():
            v = self.values[name]
            text = ", ".join(repr(float(x)) for x in v) if key.kind == "vec3" else repr(v)
            out.append(f"{name} = {text}")
        return "\n".join(out) + "\n"


def parse_config(text: str, base: Config | None = None) -> Config:
    cfg = base or Config.defaults()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", None, lineno)
        name, value = (s.strip() for s in line.split("=", 1))
        if not name:
            raise ConfigError("empty key", None, lineno)
        if name in seen:
            raise ConfigError("duplicate key", name, lineno)
        seen.add(name)
        cfg.set(name, value, lineno)
    return cfg


def load_config(path) -> Config:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def parse_kv(text: str) -> dict:
    """Schema-free ``key = value`` reader for summaries and sidecars."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line and "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out
