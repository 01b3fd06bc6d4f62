"""Command-line surface tying the phases together.

Every subcommand accepts --config/--seed/--out, writes a fully resolved
config snapshot next to its outputs, and exits 0 on success (2 for usage
errors, distinct codes for checkpoint format problems).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from pointsdf import images as img_io
from pointsdf import mesh as mesh_io
from pointsdf.cameras import load_cameras, save_cameras
from pointsdf.checkpoint import CheckpointError, load_checkpoint
from pointsdf.config import (
    ConfigError,
    RunConfig,
    load_run_config,
    save_run_config,
    scene_from_config,
)
from pointsdf.meshing import (
    ExtractionConfig,
    chamfer_distance,
    field_sdf_fn,
    latent_analysis,
    marching_cubes,
    psnr,
)
from pointsdf.sampling import SeedPointSet
from pointsdf.scene import render_ground_truth
from pointsdf.training import (
    TrainingAborted,
    ViewSet,
    fit_latents_only,
    model_from_checkpoint,
    reconstruct,
    train_prior,
)


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _snapshot(cfg: RunConfig, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    save_run_config(os.path.join(out, "config.resolved.json"), cfg)


def _progress(tag):
    def cb(step, total, terms, elapsed):
        parts = " ".join(f"{k}={v:.4f}" for k, v in terms.items())
        print(f"[{tag}] step {step}/{total} ({elapsed:.0f}s) {parts}", flush=True)

    return cb


def cmd_gen_scene(args) -> int:
    cfg = _load_config(args)
    _snapshot(cfg, args.out)
    scene, train_cams, heldout_cams = scene_from_config(cfg.scene)
    for label, cams in (("view", train_cams), ("heldout", heldout_cams)):
        for i, cam in enumerate(cams):
            color, depth = render_ground_truth(scene, cam)
            img_io.save_png(os.path.join(args.out, f"{label}_{i:02d}.png"), color)
            img_io.save_depth(os.path.join(args.out, f"{label}_{i:02d}.depth"), depth)
        if cams:
            save_cameras(os.path.join(args.out, f"{label}_cameras.json"), cams)
    ext = ExtractionConfig(
        resolution=cfg.scene.gt_mesh_resolution, bounds=cfg.scene.bounds, min_component_faces=4
    )
    gt_mesh = marching_cubes(scene.sdf, ext)
    mesh_io.save_ply(os.path.join(args.out, "gt_mesh.ply"), gt_mesh)
    print(f"scene '{cfg.scene.name}': {len(train_cams)} train views, "
          f"{len(heldout_cams)} held-out views, GT mesh {len(gt_mesh.faces)} faces -> {args.out}")
    return 0


def cmd_train_prior(args) -> int:
    cfg = _load_config(args)
    _snapshot(cfg, args.out)
    ckpt = train_prior(cfg, args.out, progress=_progress("prior") if args.verbose else None)
    print(f"prior trained for {ckpt.step} steps -> {args.out}/prior.npck")
    return 0


def cmd_fit_latents(args) -> int:
    cfg = _load_config(args)
    _snapshot(cfg, args.out)
    prior = load_checkpoint(args.prior)
    result = fit_latents_only(
        prior, args.shape, args.iterations, cfg,
        trace_path=os.path.join(args.out, "fit_loss.csv"),
    )
    mae = result["metrics"]["near_surface_mae"]
    _append_results(os.path.join(args.out, "results.csv"), [(args.shape, "near_surface_mae", mae)])
    print(f"fit '{args.shape}': near-surface MAE {mae:.5f} ({result['metrics']['evaluated']} eval points)")
    return 0


def _load_views(scene_dir: str) -> ViewSet:
    cams = load_cameras(os.path.join(scene_dir, "view_cameras.json"))
    images, depths = [], []
    for i in range(len(cams)):
        images.append(img_io.load_png(os.path.join(scene_dir, f"view_{i:02d}.png")))
        depths.append(img_io.load_depth(os.path.join(scene_dir, f"view_{i:02d}.depth")))
    return ViewSet(images, depths, cams)


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    _snapshot(cfg, args.out)
    views = _load_views(args.scene)
    prior = load_checkpoint(args.prior) if args.prior else None
    seeds = SeedPointSet.load_ply(args.points) if args.points else None
    ckpt = reconstruct(
        cfg, views, prior, args.out, seed_points=seeds,
        progress=_progress("recon") if args.verbose else None,
    )
    print(f"reconstruction finished at step {ckpt.step} -> {args.out}/recon.npck")
    return 0


def cmd_render(args) -> int:
    cfg = _load_config(args)
    _snapshot(cfg, args.out)
    ckpt = load_checkpoint(args.checkpoint)
    model, grid = model_from_checkpoint(ckpt, cfg if args.config else None)
    cams = load_cameras(args.cameras)
    rcfg = cfg.renderer
    rng = np.random.default_rng(cfg.seed)
    from pointsdf.renderer import render_image

    for i, cam in enumerate(cams):
        color, depth = render_image(model, grid, cam, rcfg, rng)
        img_io.save_png(os.path.join(args.out, f"render_{i:02d}.png"), color)
        img_io.save_depth(os.path.join(args.out, f"render_{i:02d}.depth"), depth)
    print(f"rendered {len(cams)} views -> {args.out}")
    return 0


def cmd_extract_mesh(args) -> int:
    cfg = _load_config(args)
    _snapshot(cfg, args.out)
    ckpt = load_checkpoint(args.checkpoint)
    model, grid = model_from_checkpoint(ckpt, cfg if args.config else None)
    mesh = marching_cubes(field_sdf_fn(model, grid), cfg.extraction)
    path = os.path.join(args.out, "mesh.obj" if args.format == "obj" else "mesh.ply")
    if args.format == "obj":
        mesh_io.save_obj(path, mesh)
    else:
        mesh_io.save_ply(path, mesh)
    print(f"extracted mesh: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces -> {path}")
    return 0


def _append_results(path: str, rows) -> None:
    fresh = not os.path.exists(path)
    with open(path, "a") as fh:
        if fresh:
            fh.write("scene,metric,value\n")
        for scene, metric, value in rows:
            fh.write(f"{scene},{metric},{value!r}\n")


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    _snapshot(cfg, args.out)
    ckpt = load_checkpoint(args.checkpoint)
    model, grid = model_from_checkpoint(ckpt, cfg if args.config else None)
    rng = np.random.default_rng(cfg.seed)
    rows = []

    mesh = marching_cubes(field_sdf_fn(model, grid), cfg.extraction)
    if len(mesh.faces) == 0:
        print("warning: extracted mesh is empty", file=sys.stderr)
    gt_mesh = mesh_io.load_ply(os.path.join(args.scene, "gt_mesh.ply"))
    lo = np.asarray(cfg.scene.eval_bounds[:3])
    hi = np.asarray(cfg.scene.eval_bounds[3:])

    def clipped_samples(m, n):
        pts = m.sample_surface(4 * n, rng)
        keep = np.all((pts >= lo) & (pts <= hi), axis=1)
        return pts[keep][:n]

    if len(mesh.faces):
        a = clipped_samples(mesh, args.n_points)
        b = clipped_samples(gt_mesh, args.n_points)
        if len(a) and len(b):
            rows.append((cfg.scene.name, "chamfer", chamfer_distance(a, b)))

    heldout_path = os.path.join(args.scene, "heldout_cameras.json")
    if os.path.exists(heldout_path):
        from pointsdf.renderer import render_image

        cams = load_cameras(heldout_path)
        for i, cam in enumerate(cams):
            gt = img_io.load_png(os.path.join(args.scene, f"heldout_{i:02d}.png"))
            color, _ = render_image(model, grid, cam, cfg.renderer, rng)
            img_io.save_png(os.path.join(args.out, f"eval_heldout_{i:02d}.png"), color)
            rows.append((cfg.scene.name, f"psnr_heldout_{i:02d}", psnr(color, gt)))

    _append_results(os.path.join(args.out, "results.csv"), rows)
    for scene, metric, value in rows:
        print(f"{scene} {metric}: {value:.5f}")
    return 0


def cmd_analyze_latents(args) -> int:
    cfg = _load_config(args)
    _snapshot(cfg, args.out)
    ckpt = load_checkpoint(args.checkpoint)
    latents = ckpt.arrays.get("points/geo_feat")
    positions = ckpt.arrays.get("points/positions")
    if latents is None or positions is None:
        print("checkpoint has no point latents", file=sys.stderr)
        return 1
    result = latent_analysis(latents, positions, args.components, args.clusters, cfg.seed)
    mesh_io.save_ply(
        os.path.join(args.out, "latents_pca.ply"),
        mesh_io.TriMesh(positions, np.zeros((0, 3), dtype=np.int64), result["pca_colors"]),
    )
    mesh_io.save_ply(
        os.path.join(args.out, "latents_clusters.ply"),
        mesh_io.TriMesh(positions, np.zeros((0, 3), dtype=np.int64), result["cluster_colors"]),
    )
    with open(os.path.join(args.out, "latent_clusters.csv"), "w") as fh:
        fh.write("index,label\n")
        for i, lab in enumerate(result["labels"]):
            fh.write(f"{i},{lab}\n")
    print(f"analyzed {len(latents)} latents: explained variance "
          f"{np.round(result['explained'], 4).tolist()} -> {args.out}")
    return 0


def cmd_check_gradients(args) -> int:
    cfg = _load_config(args)
    if args.out:
        _snapshot(cfg, args.out)
    from pointsdf.gradcheck import run_all

    results = run_all(verbose=True)
    worst = max(results.values())
    if worst < 1e-4:
        print(f"all gradient checks passed (worst {worst:.3e})")
        return 0
    print(f"gradient checks FAILED (worst {worst:.3e})", file=sys.stderr)
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointsdf",
        description="Sparse-view surface reconstruction with neural point clouds and a local SDF prior",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("gen-scene", help="render a synthetic scene: images, depths, cameras, GT mesh")
    common(p)
    p.set_defaults(fn=cmd_gen_scene)

    p = sub.add_parser("train-prior", help="pre-train the geometry decoders on shape distances")
    common(p)
    p.set_defaults(fn=cmd_train_prior)

    p = sub.add_parser("fit-latents", help="fit latents for an unseen shape with frozen decoders")
    common(p)
    p.add_argument("--prior", required=True, help="prior checkpoint")
    p.add_argument("--shape", default="heldout_torus")
    p.add_argument("--iterations", type=int, default=300)
    p.set_defaults(fn=cmd_fit_latents)

    p = sub.add_parser("reconstruct", help="sparse-view reconstruction from a generated scene")
    common(p)
    p.add_argument("--scene", required=True, help="directory from gen-scene")
    p.add_argument("--prior", help="prior checkpoint (omit for the no-prior ablation)")
    p.add_argument("--points", help="seed point PLY (default: unproject the input depths)")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("render", help="render novel views from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cameras", required=True, help="cameras JSON")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("extract-mesh", help="marching-cubes mesh from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--format", choices=("ply", "obj"), default="ply")
    p.set_defaults(fn=cmd_extract_mesh)

    p = sub.add_parser("eval", help="Chamfer/PSNR of a reconstruction against scene ground truth")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True, help="directory from gen-scene")
    p.add_argument("--n-points", type=int, default=10000)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("analyze-latents", help="PCA + clustering of optimized geometry latents")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--components", type=int, default=3)
    p.add_argument("--clusters", type=int, default=6)
    p.set_defaults(fn=cmd_analyze_latents)

    p = sub.add_parser("check-gradients", help="finite-difference validation of all gradients")
    common(p, out_required=False)
    p.set_defaults(fn=cmd_check_gradients)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing file: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
