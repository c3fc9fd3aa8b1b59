"""``morphkit`` command line: synth, bind, train, morph, render, eval, geodesic.

Exit codes
----------
0  success
2  usage error (unknown flag, bad argument)
3  missing input file
4  configuration violation
5  invalid input data (unparsable file, too few frames, ...)
6  runtime failure (diverged training, I/O error)

Failures print a single line ``error: code=<n> kind=<kind> message=<text>`` to stderr.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import SCHEMA, Config, ConfigError
from .geomesh import Normalization, build_hybrid_graph, farthest_point_sample, geodesic_table, load_mesh, normalize_mesh
from .gsplat import bind_gaussians, init_vertex_colors, load_gaussians, save_gaussians
from .io import MeshParseError, write_obj
from .losses import write_loss_csv
from .metrics import evaluate_sequence, write_report_csv, write_summary
from .morphflow import DEFAULT_TIMESTEPS, MANIFEST, export_sequence, read_manifest, write_manifest
from .render import frame_path, rasterize, read_image, write_image
from .synth import KINDS, deform_pair, make_icosphere
from .trainer import TrainConfig, Trainer, TrainingDiverged, read_sidecar, resume, sidecar_path

logger = logging.getLogger("morphkit")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4, 5, 6
CHECKPOINT = "checkpoint.mkt"
NORMALIZATION = "normalization.txt"

_GROUPS = {
    "train": ("train",),
    "morph": (),
    "render": ("render",),
    "eval": ("metrics",),
    "geodesic": (),
    "synth": (),
    "bind": (),
}


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, "missing_file", f"no such file: {p}")
    return p


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_keys(p: argparse.ArgumentParser, groups):
    keys = [k for k in SCHEMA.values() if k.group in groups]
    if not keys:
        return
    g = p.add_argument_group("config keys (override --config)")
    for k in keys:
        if k.name == "seed":
            continue
        default = ", ".join(repr(x) for x in k.default) if k.kind == "vec3" else repr(k.default)
        g.add_argument(_flag(k.name), dest=f"key_{k.name}", metavar="V", help=f"{k.help} [{k.name}, default {default}]")


class _Parser(argparse.ArgumentParser):
    """Report usage errors through the single-line error channel."""

    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="morphkit", description="Mesh-guided Gaussian morphing toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="PATH", help="flat key = value config file")
        p.add_argument("--out", metavar="DIR", required=True, help="output directory")
        p.add_argument("--seed", dest="key_seed", metavar="N", help="random seed [seed, default 0]")
        _add_keys(p, _GROUPS[name])
        return p

    p = command("synth", "generate a synthetic source/target pair with ground-truth map")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--magnitude", default=None,
                   help="scalar or x,y,z (defaults: translate 0.3, rotate 30, ellipsoid-scale 1.6, bend 60, twist 90)")
    p.add_argument("--subdivisions", type=int, default=2)
    p.add_argument("--radius", type=float, default=1.0)

    p = command("bind", "bind 3DGS Gaussians to a mesh and initialize vertex colours")
    p.add_argument("--mesh", required=True)
    p.add_argument("--gaussians", required=True)
    p.add_argument("--view", default="0,0,1", help="canonical view direction for SH colours")

    p = command("train", "optimize correspondence and morph flow")
    p.add_argument("--source", help="source mesh (OBJ/PLY)")
    p.add_argument("--target", help="target mesh (OBJ/PLY)")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")

    p = command("morph", "export the morph sequence from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gaussians", help="bound Gaussians from `bind` (normalized source frame)")
    p.add_argument("--frames", type=int, default=len(DEFAULT_TIMESTEPS), help="number of timesteps (>= 2)")

    p = command("render", "rasterize exported OBJ frames to PPM")
    p.add_argument("--frames", required=True, help="directory written by `morph`")

    p = command("eval", "metrics over rendered frames")
    p.add_argument("--frames", required=True, help="directory written by `render`")

    p = command("geodesic", "dump the sampled geodesic table of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--samples", type=int, default=TrainConfig.geo_samples)
    p.add_argument("--knn", type=int, default=TrainConfig.knn)
    return parser


def effective_config(args) -> Config:
    cfg = Config.defaults()
    if args.config:
        cfg = cfgmod.parse_config(_need(args.config).read_text(encoding="utf-8"), cfg)
    for name in SCHEMA:
        val = getattr(args, f"key_{name}", None)
        if val is not None:
            cfg.set(name, val)
    return cfg


def _echo(cfg: Config, out: Path):
    text = cfg.dumps()
    (out / "config.txt").write_text(text, encoding="utf-8")
    print("# effective config")
    print(text, end="")


def _load_normalized(path):
    mesh = load_mesh(_need(path))
    if mesh.colors is None:
        logger.warning("%s has no vertex colours; using uniform grey", path)
    return normalize_mesh(mesh)


def _write_norm(path, tr: Normalization):
    cx, cy, cz = tr.center
    path.write_text(f"scale = {tr.scale!r}\ncenter = {cx!r}, {cy!r}, {cz!r}\n", encoding="utf-8")


def _read_norm(path) -> Normalization:
    kv = cfgmod.parse_kv(path.read_text(encoding="utf-8"))
    return Normalization(float(kv["scale"]), tuple(float(x) for x in kv["center"].split(",")))


# --------------------------------------------------------------------------- commands


_DEFAULT_MAGNITUDE = {"translate": "0.3", "rotate": "30", "ellipsoid-scale": "1.6", "bend": "60", "twist": "90"}


def cmd_synth(args, cfg, out):
    mag = args.magnitude or _DEFAULT_MAGNITUDE[args.kind]
    try:
        m = [float(x) for x in mag.split(",")]
    except ValueError:
        raise CliError(EXIT_USAGE, "usage", f"bad --magnitude {mag!r}") from None
    pair = deform_pair(make_icosphere(args.subdivisions, args.radius), args.kind, m[0] if len(m) == 1 else m)
    pair.write(out)
    (out / "pair.txt").write_text(f"tag = {pair.tag}\nvertices = {pair.source.n_vertices}\n", encoding="utf-8")


def cmd_bind(args, cfg, out):
    mesh, tr = normalize_mesh(load_mesh(_need(args.mesh)))
    gs = load_gaussians(_need(args.gaussians)).similarity_transformed(tr.scale, tr.center)
    bound = bind_gaussians(gs, mesh)
    view = cfgmod._vec3(args.view)
    colored = init_vertex_colors(mesh, bound, view)
    save_gaussians(out / "gaussians_bound.ply", bound)
    write_obj(out / "mesh_colored.obj", tr.invert(colored.vertices), colored.faces, colored.colors)
    _write_norm(out / NORMALIZATION, tr)


def cmd_train(args, cfg, out):
    tcfg = cfg.train_config()
    ckpt = out / CHECKPOINT
    cache = out / "cache"
    if args.resume:
        src_ckpt = _need(args.resume)
        meta = read_sidecar(src_ckpt)
        source = args.source or meta["source_path"]
        target = args.target or meta["target_path"]
    elif not (args.source and args.target):
        raise CliError(EXIT_USAGE, "usage", "train needs --source and --target (or --resume)")
    else:
        source, target = args.source, args.target
    src, _ = _load_normalized(source)
    tgt, _ = _load_normalized(target)
    extra = {"source_path": str(Path(source).resolve()), "target_path": str(Path(target).resolve())}

    def log(tr, rep):
        if rep.iter % 50 == 0:
            logger.info("iter %d total %.6g (geo %.4g arap %.4g smooth %.4g align %.4g)",
                        rep.iter, rep.total, rep.geo, rep.arap, rep.smooth, rep.align)

    if args.resume:
        if Path(args.resume).resolve() != ckpt.resolve():
            shutil.copyfile(args.resume, ckpt)
            shutil.copyfile(sidecar_path(args.resume), sidecar_path(ckpt))
        tr = resume(ckpt, tcfg, src, tgt, cache_dir=cache, run=False)
        append = (out / "loss.csv").exists()
    else:
        tr = Trainer(src, tgt, tcfg, cache_dir=cache)
        append = False
    try:
        tr.run(checkpoint_path=ckpt, callback=log, meta=extra)
    finally:
        write_loss_csv(out / "loss.csv", tr.history, append=append)


def _restore(ckpt_path):
    ckpt = _need(ckpt_path)
    meta = read_sidecar(ckpt)
    tcfg = TrainConfig(**meta["config"])
    src, tr_src = _load_normalized(meta["source_path"])
    tgt, _ = _load_normalized(meta["target_path"])
    trainer = Trainer(src, tgt, tcfg)
    trainer.load_checkpoint(ckpt)
    return trainer, tr_src


def cmd_morph(args, cfg, out):
    if args.frames < 2:
        raise CliError(EXIT_USAGE, "usage", "--frames must be >= 2")
    trainer, tr = _restore(args.checkpoint)
    ts = DEFAULT_TIMESTEPS if args.frames == len(DEFAULT_TIMESTEPS) else tuple(np.linspace(0.0, 1.0, args.frames))
    state = trainer.morph_state(ts)
    gs = load_gaussians(_need(args.gaussians)) if args.gaussians else None
    if gs is not None and gs.binding is None:
        raise CliError(EXIT_DATA, "input_data", f"{args.gaussians}: Gaussians are not bound (run `bind`)")
    mesh = trainer.src.mesh
    export_sequence(state, mesh, out, gs=gs, transform=tr)
    _write_norm(out / NORMALIZATION, tr)


def _manifest(frames_dir: Path):
    m = frames_dir / MANIFEST
    _need(m)
    return read_manifest(m)


def cmd_render(args, cfg, out):
    frames_dir = Path(args.frames)
    entries = _manifest(frames_dir)
    norm_file = frames_dir / NORMALIZATION
    tr = _read_norm(norm_file) if norm_file.exists() else None
    camera = cfg.camera()
    for k, (name, _t) in enumerate(entries):
        mesh = load_mesh(_need(frames_dir / name))
        if tr is not None:
            mesh = mesh.with_vertices(tr.apply(mesh.vertices))
        write_image(rasterize(mesh, camera), frame_path(out, k))
    write_manifest(out, [t for _, t in entries], ext="ppm")


def cmd_eval(args, cfg, out):
    frames_dir = Path(args.frames)
    entries = _manifest(frames_dir)
    frames = [read_image(_need(frames_dir / name)) for name, _ in entries]
    if len(frames) < 3:
        raise CliError(EXIT_DATA, "input_data", f"eval needs >= 3 frames, got {len(frames)} (< 3 frames)")
    rep = evaluate_sequence(frames, [t for _, t in entries], cfg.thresholds())
    write_report_csv(out / "metrics.csv", rep)
    write_summary(out / "summary.txt", rep)
    print(f"mse_ssim={rep.mse_ssim!r} delta_e_avg={rep.delta_e_avg!r} ei_mean={rep.ei_mean!r}")


def cmd_geodesic(args, cfg, out):
    mesh, _ = normalize_mesh(load_mesh(_need(args.mesh)))
    if args.samples < 1 or args.knn < 1:
        raise CliError(EXIT_USAGE, "usage", "--samples and --knn must be >= 1")
    ids = farthest_point_sample(mesh, min(args.samples, mesh.n_vertices))
    table = geodesic_table(build_hybrid_graph(mesh, args.knn), ids)
    np.savetxt(out / "geodesic.txt", table.dist, fmt="%.17g",
               header="sample_ids: " + " ".join(str(int(i)) for i in table.sample_ids))


COMMANDS = {
    "synth": cmd_synth, "bind": cmd_bind, "train": cmd_train, "morph": cmd_morph,
    "render": cmd_render, "eval": cmd_eval, "geodesic": cmd_geodesic,
}


def _fail(code: int, kind: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"error: code={code} kind={kind} message={message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as e:
        return _fail(e.code, e.kind, e)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = effective_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _echo(cfg, out)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](args, cfg, out)
    except CliError as e:
        return _fail(e.code, e.kind, e)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", e)
    except FileNotFoundError as e:
        return _fail(EXIT_MISSING, "missing_file", e)
    except TrainingDiverged as e:
        return _fail(EXIT_RUNTIME, "diverged", e)
    except (MeshParseError, ValueError, KeyError) as e:
        return _fail(EXIT_DATA, "input_data", e)
    except OSError as e:
        return _fail(EXIT_RUNTIME, "io", e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
