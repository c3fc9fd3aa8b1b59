"""Mesh-guided Gaussian morphing: correspondence, morph flow, rendering and metrics."""

from .geomesh import GeodesicTable, HybridGraph, Mesh, build_hybrid_graph, geodesic_table, load_mesh, normalize_mesh
from .gsplat import GaussianSet, bind_gaussians, load_gaussians, update_gaussian_positions
from .metrics import MetricReport, evaluate_sequence
from .morphflow import MorphState, export_sequence
from .render import Camera, Image, rasterize
from .synth import deform_pair, make_icosphere
from .trainer import TrainConfig, Trainer, resume, train

__version__ = "0.1.0"

__all__ = [
    "Camera", "GaussianSet", "GeodesicTable", "HybridGraph", "Image", "Mesh", "MetricReport", "MorphState",
    "TrainConfig", "Trainer", "bind_gaussians", "build_hybrid_graph", "deform_pair", "evaluate_sequence",
    "export_sequence", "geodesic_table", "load_gaussians", "load_mesh", "make_icosphere", "normalize_mesh",
    "rasterize", "resume", "train", "update_gaussian_positions",
]
