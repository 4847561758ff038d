"""Command-line pipeline driver.

Subcommands cover the whole loop: generate analytic fixtures, sample a
cloud from the diffusion oracle, edit it, reconstruct a mesh, render it,
and evaluate against a reference.  One global seed fans out to per-stage
seeds, so identical invocations produce byte-identical files.

Exit codes: 0 success, 2 configuration problem, 3 stage failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import rng
from .config import ConfigError, PipelineConfig, load_config
from .diffusion import (DiffusionError, GmmOracleDenoiser, cloud_to_state,
                        sample)
from .fileio import (FormatError, atomic_write, load_obj, load_ply, save_obj,
                     save_pfm, save_ply, save_png)
from .fixtures import FIXTURE_SHAPES, resolve_envmap
from .isosurface import IsosurfaceError, TriMesh, extract_mesh
from .metrics import MetricsError, align, metric_report
from .pointcloud import EditOp, PointCloudError, apply_edits
from .render import (Camera, RenderError, material_for_mesh, rasterize, shade,
                     srgb_encode, tonemap_reinhard)
from .sdf import SdfError, fit_sdf, sample_grid

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

_MODULE_ERRORS = (PointCloudError, DiffusionError, SdfError, IsosurfaceError,
                  RenderError, MetricsError, FormatError, OSError, ValueError)


class StageError(RuntimeError):
    """A pipeline stage failed; the message carries the stage label."""

    def __init__(self, stage: str, message):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@contextmanager
def stage_scope(stage: str):
    """Re-raise module errors as StageError so main can map them to exit 3."""
    try:
        yield
    except StageError:
        raise
    except _MODULE_ERRORS as err:
        raise StageError(stage, err) from err


# --- configuration plumbing ------------------------------------------------

# argparse attribute -> (config block, field) for flag overrides
_OVERRIDES = {
    "steps": ("sampler", "steps"),
    "eta": ("sampler", "eta"),
    "cfg_scale": ("sampler", "cfg_scale"),
    "n": ("sampler", "n"),
    "k": ("fit", "k"),
    "color_radius": ("fit", "color_radius"),
    "res": ("mesh", "resolution"),
    "az": ("render", "azimuth"),
    "el": ("render", "elevation"),
    "distance": ("render", "distance"),
    "width": ("render", "width"),
    "height": ("render", "height"),
    "spp_ggx": ("render", "spp_ggx"),
    "spp_env": ("render", "spp_env"),
    "spp_hemi": ("render", "spp_hemi"),
    "shadow_dist": ("render", "shadow_distance"),
    "shadow_steps": ("render", "shadow_steps"),
    "env": ("render", "env"),
}


def effective_config(args: argparse.Namespace) -> PipelineConfig:
    """File config (if any) + defaults + explicit flag overrides."""
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    for attr, (block, field) in _OVERRIDES.items():
        value = getattr(args, attr, None)
        if value is not None:
            updated = dataclasses.replace(getattr(cfg, block), **{field: value})
            cfg = cfg.replace(**{block: updated})
    if getattr(args, "no_shadows", False):
        cfg = cfg.replace(render=dataclasses.replace(cfg.render, shadows=False))
    return cfg


def _emit_config(cfg: PipelineConfig, path) -> None:
    atomic_write(path, (json.dumps(cfg.to_json(), indent=2) + "\n").encode("ascii"))


# --- subcommands -----------------------------------------------------------


def cmd_fixture(args, cfg: PipelineConfig) -> int:
    shape = FIXTURE_SHAPES[args.shape]
    n = args.n if args.n is not None else shape["default_n"]
    out_dir = Path(args.out_dir)
    with stage_scope("fixture"):
        out_dir.mkdir(parents=True, exist_ok=True)
        cloud = shape["cloud"](n, cfg.seed)
        mesh = shape["mesh"]()
        env = resolve_envmap("sky")
        ply = out_dir / f"{args.shape}.ply"
        obj = out_dir / f"{args.shape}.obj"
        pfm = out_dir / "env.pfm"
        save_ply(ply, cloud)
        save_obj(obj, mesh.positions, mesh.indices, mesh.colors)
        env.to_pfm(pfm)
    print(f"fixture: wrote {ply} ({cloud.n} points), {obj} "
          f"({mesh.num_faces} faces), {pfm}")
    return EXIT_OK


def _builtin_atoms(seed: int):
    from .fixtures import sphere_cloud
    return sphere_cloud(n=48, seed=rng.derive_seed(seed, "cli/atoms"))


def cmd_sample(args, cfg: PipelineConfig) -> int:
    with stage_scope("sample"):
        if args.atoms:
            atoms = load_ply(args.atoms)
        else:
            atoms = _builtin_atoms(cfg.seed)
        states = cloud_to_state(atoms)
        denoiser = GmmOracleDenoiser(
            means=states[:, None, :],
            variances=np.full(len(states), args.variance),
            weights=np.full(len(states), 1.0 / len(states)),
            schedule=cfg.sampler.schedule)
        cloud = sample(denoiser, seed=rng.derive_seed(cfg.seed, "cli/sample"),
                       steps=cfg.sampler.steps, cfg_scale=cfg.sampler.cfg_scale,
                       eta=cfg.sampler.eta, schedule=cfg.sampler.schedule,
                       n=cfg.sampler.n)
        save_ply(args.out, cloud)
    print(f"sample: wrote {args.out} ({cloud.n} points, "
          f"{cfg.sampler.steps} steps)")
    return EXIT_OK


def cmd_edit(args, cfg: PipelineConfig) -> int:
    with stage_scope("pointcloud"):
        cloud = load_ply(args.input)
    with stage_scope("edit"):
        raw = json.loads(Path(args.ops).read_text(encoding="utf-8"))
        if not isinstance(raw, list):
            raise StageError("edit", "ops file must hold a JSON array")
        ops = [EditOp.from_json(item) for item in raw]
        edited = apply_edits(cloud, ops)
        save_ply(args.out, edited)
    print(f"edit: applied {len(ops)} ops, {cloud.n} -> {edited.n} points, "
          f"wrote {args.out}")
    return EXIT_OK


def cmd_reconstruct(args, cfg: PipelineConfig) -> int:
    t0 = time.perf_counter()
    with stage_scope("pointcloud"):
        cloud = load_ply(args.input)
        if cloud.n == 0:
            raise StageError("pointcloud", "empty point cloud")
    with stage_scope("fit"):
        field = fit_sdf(cloud, k=cfg.fit.k, color_radius=cfg.fit.color_radius)
        t1 = time.perf_counter()
    with stage_scope("grid"):
        samples = sample_grid(field, cfg.mesh.resolution)
        t2 = time.perf_counter()
    with stage_scope("mesh"):
        mesh = extract_mesh(samples, metallic=cfg.mesh.metallic,
                            roughness=cfg.mesh.roughness)
        if mesh.num_faces == 0:
            raise StageError("mesh", "no surface crossed the grid")
        t3 = time.perf_counter()
        save_obj(args.out, mesh.positions, mesh.indices, mesh.colors)
    print(f"reconstruct: res {cfg.mesh.resolution}, {mesh.num_faces} faces, "
          f"fit {t1 - t0:.2f}s grid {t2 - t1:.2f}s mesh {t3 - t2:.2f}s "
          f"total {time.perf_counter() - t0:.2f}s, wrote {args.out}")
    return EXIT_OK


def _load_mesh(path, cfg: PipelineConfig) -> TriMesh:
    vertices, faces, colors = load_obj(path)
    if colors is not None:
        colors = np.clip(colors, 0.0, 1.0)
    return TriMesh(positions=vertices, indices=faces, colors=colors,
                   metallic=cfg.mesh.metallic, roughness=cfg.mesh.roughness)


def _render_mesh(mesh: TriMesh, cfg: PipelineConfig, seed: int):
    cam = Camera.from_orbit(cfg.render.azimuth, cfg.render.elevation,
                            distance=cfg.render.distance,
                            fov_y=math.radians(cfg.render.fov_deg),
                            width=cfg.render.width, height=cfg.render.height)
    env = resolve_envmap(cfg.render.env)
    gbuffer = rasterize(mesh, cam)
    return shade(gbuffer, env, material_for_mesh(mesh), seed=seed,
                 counts=cfg.render.counts, shadows=cfg.render.shadows,
                 shadow_distance=cfg.render.shadow_distance,
                 shadow_steps=cfg.render.shadow_steps)


def cmd_render(args, cfg: PipelineConfig) -> int:
    with stage_scope("render"):
        mesh = _load_mesh(args.input, cfg)
        result = _render_mesh(mesh, cfg, rng.derive_seed(cfg.seed, "cli/render"))
        save_png(args.out, srgb_encode(tonemap_reinhard(result.image)))
        if args.hdr:
            save_pfm(args.hdr, result.image.astype(np.float32))
    print(f"render: wrote {args.out} ({cfg.render.width}x{cfg.render.height}), "
          f"clamped_pixels={result.clamped_pixels} "
          f"nonfinite_samples={result.nonfinite_samples}")
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    with stage_scope("eval"):
        pred = _load_mesh(args.pred, cfg)
        gt = _load_mesh(args.gt, cfg)
        for path, mesh in ((args.pred, pred), (args.gt, gt)):
            if mesh.num_faces == 0:
                raise StageError("eval", f"no triangles in {path}")
        eval_seed = rng.derive_seed(cfg.seed, "cli/eval")
        alignment = align(pred, gt, seed=eval_seed)
        # Render both in the normalized ground-truth frame with one camera.
        from .pointcloud import unit_cube_frame
        g_frame = unit_cube_frame(gt.positions)
        gt_view = dataclasses.replace(gt, positions=g_frame.apply(gt.positions))
        pred_view = dataclasses.replace(
            pred, positions=g_frame.apply(alignment.apply(pred.positions)))
        render_seed = rng.derive_seed(cfg.seed, "cli/eval-render")
        pred_img = srgb_encode(tonemap_reinhard(
            _render_mesh(pred_view, cfg, render_seed).image))
        gt_img = srgb_encode(tonemap_reinhard(
            _render_mesh(gt_view, cfg, render_seed).image))
        report = metric_report(pred, gt, pred_image=pred_img, gt_image=gt_img,
                               seed=eval_seed, alignment=alignment)
        atomic_write(args.out,
                     (json.dumps(report, indent=2) + "\n").encode("ascii"))
    print(f"eval: cd={report['cd']:.4f} fs@0.1={report['fs_0.1']:.3f} "
          f"psnr={report['psnr']:.2f} ssim={report['ssim']:.4f}, "
          f"wrote {args.out}")
    return EXIT_OK


def cmd_serve(args, cfg: PipelineConfig) -> int:
    import uvicorn

    from .service import build_app
    uvicorn.run(build_app(cfg), host=args.host, port=args.port,
                log_level="warning")
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointforge",
        description="Point-cloud diffusion, editing, meshing, rendering, "
                    "and evaluation pipeline.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="global seed (overrides config)")
    common.add_argument("--config", default=None,
                        help="TOML or JSON settings file")
    common.add_argument("--emit-config", default=None, metavar="PATH",
                        help="write the merged effective settings as JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", parents=[common],
                       help="generate an analytic cloud, mesh, and envmap")
    p.add_argument("--shape", choices=sorted(FIXTURE_SHAPES), default="sphere")
    p.add_argument("--n", type=int, default=None,
                   help="number of surface samples (default per shape)")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("sample", parents=[common],
                       help="sample a cloud from the diffusion oracle")
    p.add_argument("--oracle", choices=["gmm"], default="gmm")
    p.add_argument("--atoms", default=None,
                   help="PLY whose points become mixture atoms "
                        "(default: built-in sphere atoms)")
    p.add_argument("--variance", type=float, default=0.0,
                   help="isotropic variance of each mixture atom")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--cfg-scale", type=float, default=None, dest="cfg_scale")
    p.add_argument("--n", type=int, default=None, help="points per cloud")
    p.add_argument("--out", required=True, help="output PLY")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("edit", parents=[common],
                       help="apply a JSON list of edit operations")
    p.add_argument("--in", dest="input", required=True, help="input PLY")
    p.add_argument("--ops", required=True, help="JSON file with the edit list")
    p.add_argument("--out", required=True, help="output PLY")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("reconstruct", parents=[common],
                       help="fit an SDF to a cloud and extract a mesh")
    p.add_argument("--in", dest="input", required=True, help="input PLY")
    p.add_argument("--res", type=int, default=None, help="tet grid resolution")
    p.add_argument("--k", type=int, default=None, help="fit neighborhood size")
    p.add_argument("--color-radius", type=float, default=None,
                   dest="color_radius")
    p.add_argument("--out", required=True, help="output OBJ")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("render", parents=[common],
                       help="rasterize and shade a mesh to PNG (and PFM)")
    p.add_argument("--in", dest="input", required=True, help="input OBJ")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--hdr", default=None, help="also write raw radiance PFM")
    p.add_argument("--az", type=float, default=None, help="orbit azimuth deg")
    p.add_argument("--el", type=float, default=None, help="orbit elevation deg")
    p.add_argument("--distance", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--env", default=None,
                   help="'sky', 'constant[:v]', or a PFM path")
    p.add_argument("--spp-ggx", type=int, default=None, dest="spp_ggx")
    p.add_argument("--spp-env", type=int, default=None, dest="spp_env")
    p.add_argument("--spp-hemi", type=int, default=None, dest="spp_hemi")
    p.add_argument("--shadow-dist", type=float, default=None,
                   dest="shadow_dist")
    p.add_argument("--shadow-steps", type=int, default=None,
                   dest="shadow_steps")
    p.add_argument("--no-shadows", action="store_true", dest="no_shadows")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[common],
                       help="align, compare, and report metrics as JSON")
    p.add_argument("--pred", required=True, help="predicted mesh OBJ")
    p.add_argument("--gt", required=True, help="reference mesh OBJ")
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", parents=[common],
                       help="run the interactive editing HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8423)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args)
        if args.emit_config:
            _emit_config(cfg, args.emit_config)
        return args.func(args, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
