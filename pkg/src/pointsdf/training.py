"""The two optimization phases.

Phase 1 pre-trains the geometry decoders (with per-shape latent tables) on
ground-truth signed distances of a small shape set.  Phase 2 freezes those
decoders and reconstructs a scene from a few posed images by optimizing
latents, the appearance decoders, and optionally the density sharpness.
Both loops are deterministic functions of (config, seed); loss traces go to
CSV, state to checkpoint files.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from pointsdf import shapes as shape_lib
from pointsdf.autodiff import ParameterStore, adam_step, cosine_lr, mlp_init
from pointsdf.checkpoint import Checkpoint, rng_state_to_json, save_checkpoint
from pointsdf.config import RunConfig, config_to_dict
from pointsdf.field import DECODER_SPECS, FieldConfig, FieldModel, eval_sdf_batch, gather_neighbors
from pointsdf.losses import LossWeights, make_extractor, prior_objective, reconstruction_objective
from pointsdf.mesh import MeshShape, load_obj, load_ply
from pointsdf.renderer import RenderConfig
from pointsdf.sampling import SeedPointSet, farthest_point_sample, sample_query_points, seed_points_from_views
from pointsdf.spatial_index import VoxelGrid

Array = np.ndarray


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class CsvTrace:
    """Loss-trace writer: one row per step, repr-exact floats."""

    def __init__(self, path, columns: list[str]):
        self.path = path
        self.columns = columns
        with open(path, "w") as fh:
            fh.write(",".join(columns) + "\n")

    def row(self, values) -> None:
        cells = [repr(v) if isinstance(v, float) else str(v) for v in values]
        with open(self.path, "a") as fh:
            fh.write(",".join(cells) + "\n")


def resolve_shape(name: str):
    """A catalog name, 'heldout_torus', or 'mesh:<path>' (OBJ or PLY)."""
    catalog = shape_lib.prior_shape_catalog()
    if name in catalog:
        return catalog[name]
    if name == "heldout_torus":
        return shape_lib.heldout_shape()
    if name.startswith("mesh:"):
        path = name[5:]
        mesh = load_obj(path) if str(path).endswith(".obj") else load_ply(path)
        return MeshShape(mesh.normalized_to_unit_cube())
    raise ValueError(f"unknown shape {name!r}")


@dataclass
class ShapeInstance:
    name: str
    shape: object
    base_points: Array
    pool_x: Array
    pool_s: Array
    pos_idx: Array
    neg_idx: Array


def prepare_shape_instance(name: str, cfg, rng: np.random.Generator) -> ShapeInstance:
    shape = resolve_shape(name)
    surf = shape.sample_surface(cfg.surface_samples_per_shape, rng)
    base, _ = farthest_point_sample(
        surf, cfg.point_spacing, rng, max_points=cfg.neural_points_per_instance
    )
    x, s = sample_query_points(shape, cfg.query_pool_per_shape, tuple(cfg.query_variances), rng)
    return ShapeInstance(
        name, shape, base, x, s, np.flatnonzero(s > 0), np.flatnonzero(s <= 0)
    )


def _draw_balanced(inst: ShapeInstance, n: int, rng: np.random.Generator) -> tuple[Array, Array]:
    n_pos = n // 2
    n_neg = n - n_pos
    if len(inst.pos_idx) == 0 or len(inst.neg_idx) == 0:  # no-interior shapes
        idx = rng.choice(len(inst.pool_x), size=n, replace=False)
    else:
        idx = np.concatenate(
            [
                rng.choice(inst.pos_idx, size=n_pos, replace=len(inst.pos_idx) < n_pos),
                rng.choice(inst.neg_idx, size=n_neg, replace=len(inst.neg_idx) < n_neg),
            ]
        )
    return inst.pool_x[idx], inst.pool_s[idx]


def _prior_field_cfg(run_cfg: RunConfig) -> FieldConfig:
    base = run_cfg.field
    return FieldConfig(
        num_neighbors=run_cfg.prior.num_neighbors,
        radius=base.radius,
        rbf_lambda=base.rbf_lambda,
        sdf_fallback=base.sdf_fallback,
        background=base.background,
        pe_freqs=base.pe_freqs,
        latent_init_std=base.latent_init_std,
        grad_eps=base.grad_eps,
        log_beta_init=base.log_beta_init,
    )


def train_prior(run_cfg: RunConfig, out_dir, progress=None) -> Checkpoint:
    """Pre-train the geometry decoders on ground-truth distances.

    Per step: draw a batch of shapes, jitter their neural points, assemble
    sign-balanced query minibatches, and take one Adam step on the combined
    distance / latent-smoothness / unit-gradient objective.  Latents anneal
    on a cosine schedule; decoder learning rate stays constant.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    pcfg = run_cfg.prior
    rng = np.random.default_rng(run_cfg.seed)
    fcfg = _prior_field_cfg(run_cfg)

    store = ParameterStore()
    for dname, spec in DECODER_SPECS.items():
        mlp_init(spec, rng, dname, store)

    instances = [prepare_shape_instance(name, pcfg, rng) for name in pcfg.shapes]
    models = [
        FieldModel(
            inst.base_points, fcfg, rng, store=store,
            latent_prefix=f"shape{i}", with_appearance=False,
        )
        for i, inst in enumerate(instances)
    ]

    n = len(instances)
    steps_per_epoch = max((n + pcfg.batch_size - 1) // pcfg.batch_size, 1)
    total_steps = pcfg.epochs * steps_per_epoch
    weights = LossWeights(lambda_tv=pcfg.lambda_tv, lambda_eik=pcfg.lambda_eik, sdf_eps=pcfg.sdf_eps)
    decoder_names = [nm for d in DECODER_SPECS for nm in store.names(d + "/")]

    trace = CsvTrace(f"{out_dir}/prior_loss.csv", ["step", "sdf", "tv", "eikonal", "total"])
    ckpt_path = f"{out_dir}/prior.npck"

    def export(step: int) -> Checkpoint:
        arrays = {nm: store[nm].copy() for nm in decoder_names}
        arrays["density/log_beta"] = store["density/log_beta"].copy()
        return Checkpoint(
            step=step,
            rng_state=rng_state_to_json(rng),
            configs=config_to_dict(run_cfg),
            arrays=arrays,
            meta={"phase": "prior", "adam_t": {k: store.adam_t[k] for k in decoder_names}},
        )

    step = 0
    t0 = time.perf_counter()
    for _epoch in range(pcfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, pcfg.batch_size):
            chunk = order[lo : lo + pcfg.batch_size]
            batch = []
            for i in chunk:
                inst, model = instances[i], models[i]
                noise = rng.normal(0.0, np.sqrt(pcfg.jitter_variance), size=inst.base_points.shape)
                model.positions = inst.base_points + noise
                grid = VoxelGrid.build(model.positions, run_cfg.voxel_grid)
                qx, qs = _draw_balanced(inst, pcfg.queries_per_instance, rng)
                n_eik = min(pcfg.eikonal_points_per_instance, len(qx))
                eik_x = qx[rng.choice(len(qx), size=n_eik, replace=False)] if n_eik else qx[:0]
                batch.append({"model": model, "grid": grid, "query_x": qx, "query_s": qs, "eik_x": eik_x})
            total, terms, grads = prior_objective(batch, weights)
            if not np.isfinite(total):
                ckpt = export(step)
                save_checkpoint(ckpt_path, ckpt)
                raise TrainingAborted(f"non-finite loss at step {step}", ckpt_path)
            lr_latent = cosine_lr(step, max(total_steps - 1, 1), pcfg.lr_latent_start, pcfg.lr_latent_end)
            lr = {name: (pcfg.lr_decoder if "/" in name and not name.startswith("shape") else lr_latent)
                  for name in grads}
            grads.pop("density/log_beta", None)  # density is not part of this phase
            adam_step(store, grads, lr)
            trace.row([step, terms["sdf"], terms["tv"], terms["eikonal"], total])
            step += 1
            if progress and step % 50 == 0:
                progress(step, total_steps, terms, time.perf_counter() - t0)
            if pcfg.checkpoint_every and step % pcfg.checkpoint_every == 0:
                save_checkpoint(ckpt_path, export(step))
    ckpt = export(step)
    save_checkpoint(ckpt_path, ckpt)
    return ckpt


def load_decoders_into(store: ParameterStore, ckpt: Checkpoint, geometry_only: bool = False) -> None:
    wanted = ("geo_local/", "sdf_head/") if geometry_only else ("geo_local/", "sdf_head/", "app_local/", "radiance_head/")
    for name, arr in ckpt.arrays.items():
        if any(name.startswith(p) for p in wanted) and name in store.params:
            if store[name].shape != arr.shape:
                raise ValueError(f"checkpoint array {name!r} has shape {arr.shape}, expected {store[name].shape}")
            store.params[name] = arr.astype(np.float64)


def fit_latents_only(
    prior_ckpt: Checkpoint,
    shape_name: str,
    iterations: int,
    run_cfg: RunConfig,
    seed: int | None = None,
    jitter_variance: float = 0.0,
    trace_path=None,
) -> dict:
    """Freeze the pre-trained geometry decoders and optimize a fresh latent
    table for an unseen shape on its ground-truth distances.  Returns the
    fitted model, its grid, and near-surface error metrics."""
    pcfg = run_cfg.prior
    rng = np.random.default_rng(run_cfg.seed if seed is None else seed)
    fcfg = _prior_field_cfg(run_cfg)

    store = ParameterStore()
    for dname, spec in DECODER_SPECS.items():
        mlp_init(spec, rng, dname, store)
    load_decoders_into(store, prior_ckpt, geometry_only=True)

    inst = prepare_shape_instance(shape_name, pcfg, rng)
    model = FieldModel(inst.base_points, fcfg, rng, store=store, freeze_geometry=True, with_appearance=False)
    weights = LossWeights(lambda_tv=pcfg.lambda_tv, lambda_eik=pcfg.lambda_eik, sdf_eps=pcfg.sdf_eps)
    latent_name = "points/geo_feat"
    trace = CsvTrace(trace_path, ["step", "sdf", "tv", "eikonal", "total"]) if trace_path else None

    grid = VoxelGrid.build(model.positions, run_cfg.voxel_grid)
    for step in range(iterations):
        if jitter_variance > 0:
            model.positions = inst.base_points + rng.normal(
                0.0, np.sqrt(jitter_variance), size=inst.base_points.shape
            )
            grid = VoxelGrid.build(model.positions, run_cfg.voxel_grid)
        qx, qs = _draw_balanced(inst, pcfg.queries_per_instance, rng)
        n_eik = min(pcfg.eikonal_points_per_instance, len(qx))
        eik_x = qx[rng.choice(len(qx), size=n_eik, replace=False)] if n_eik else qx[:0]
        total, terms, grads = prior_objective(
            [{"model": model, "grid": grid, "query_x": qx, "query_s": qs, "eik_x": eik_x}], weights
        )
        if not np.isfinite(total):
            raise TrainingAborted(f"non-finite loss at step {step}")
        lr = cosine_lr(step, max(iterations - 1, 1), pcfg.lr_latent_start, pcfg.lr_latent_end)
        adam_step(store, {latent_name: grads[latent_name]}, lr)
        if trace:
            trace.row([step, terms["sdf"], terms["tv"], terms["eikonal"], total])

    model.positions = inst.base_points
    grid = VoxelGrid.build(model.positions, run_cfg.voxel_grid)
    metrics = near_surface_mae(model, grid, inst.shape, rng)
    return {"model": model, "grid": grid, "instance": inst, "metrics": metrics}


def near_surface_mae(
    model: FieldModel,
    grid: VoxelGrid,
    shape,
    rng: np.random.Generator,
    band: float = 0.05,
    n_eval: int = 4000,
) -> dict:
    """Mean absolute SDF error over fresh near-surface queries (|s| < band)."""
    x, s = sample_query_points(shape, n_eval, (0.001,), rng)
    keep = np.abs(s) < band
    x, s = x[keep], s[keep]
    nb = gather_neighbors(model, grid, x)
    s_hat, _ = eval_sdf_batch(model, nb, with_tape=False)
    ok = nb.has_neighbors
    mae = float(np.abs(s_hat[ok] - s[ok]).mean())
    return {"near_surface_mae": mae, "evaluated": int(ok.sum()), "band": band}


@dataclass
class ViewSet:
    images: list[Array]
    depths: list[Array]
    cameras: list


def reconstruct(
    run_cfg: RunConfig,
    views: ViewSet,
    prior_ckpt: Checkpoint | None,
    out_dir,
    seed_points: SeedPointSet | None = None,
    progress=None,
) -> Checkpoint:
    """Sparse-view reconstruction: optimize latents, appearance decoders and
    (optionally) density sharpness against the input views, with the
    geometry decoders frozen (pre-trained when a prior checkpoint is given,
    randomly initialized otherwise for ablations)."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    rcfg = run_cfg.recon
    rng = np.random.default_rng(run_cfg.seed)

    if seed_points is None:
        seed_points = seed_points_from_views(
            views.images, views.depths, views.cameras,
            stride=rcfg.unproject_stride, spacing=rcfg.seed_point_spacing, seed=rng,
        )
    fcfg = FieldConfig(
        num_neighbors=rcfg.num_neighbors,
        radius=run_cfg.field.radius,
        rbf_lambda=run_cfg.field.rbf_lambda,
        sdf_fallback=run_cfg.field.sdf_fallback,
        background=run_cfg.field.background,
        pe_freqs=run_cfg.field.pe_freqs,
        latent_init_std=run_cfg.field.latent_init_std,
        grad_eps=run_cfg.field.grad_eps,
        log_beta_init=run_cfg.field.log_beta_init,
    )
    model = FieldModel(seed_points.points, fcfg, rng, freeze_geometry=rcfg.freeze_geometry)
    if prior_ckpt is not None and rcfg.use_prior:
        load_decoders_into(model.store, prior_ckpt, geometry_only=True)
    grid = VoxelGrid.build(model.positions, run_cfg.voxel_grid)
    if grid.stored_count < len(seed_points.points):
        warnings.warn("some seed points fell outside the voxel ranges", stacklevel=2)

    # flatten supervision pixels: (view, pixel) -> ray + ground-truth color
    all_origins, all_dirs, all_rgb = [], [], []
    for img, cam in zip(views.images, views.cameras):
        o, d = cam.all_rays()
        all_origins.append(o)
        all_dirs.append(d)
        all_rgb.append(img.reshape(-1, 3))
    all_origins = np.concatenate(all_origins)
    all_dirs = np.concatenate(all_dirs)
    all_rgb = np.concatenate(all_rgb)
    n_pixels = len(all_rgb)

    weights = LossWeights(
        lambda_tv=rcfg.lambda_tv, lambda_fc=rcfg.lambda_fc, lambda_pseu=rcfg.lambda_pseu, sdf_eps=rcfg.sdf_eps
    )
    extractor = make_extractor(rcfg.feature_extractor)
    render_cfg = run_cfg.renderer
    trainable = set(model.trainable_names(rcfg.optimize_density))

    trace = CsvTrace(f"{out_dir}/recon_loss.csv", ["step", "render", "fc", "pseudo", "tv", "total"])
    ckpt_path = f"{out_dir}/recon.npck"

    def export(step: int) -> Checkpoint:
        arrays = {name: store_arr.copy() for name, store_arr in model.store.params.items()}
        arrays["points/positions"] = model.positions.copy()
        return Checkpoint(
            step=step,
            rng_state=rng_state_to_json(rng),
            configs=config_to_dict(run_cfg),
            arrays=arrays,
            meta={
                "phase": "recon",
                "freeze_geometry": rcfg.freeze_geometry,
                "num_points": model.num_points,
            },
        )

    t0 = time.perf_counter()
    for step in range(rcfg.iterations):
        idx = rng.integers(0, n_pixels, size=rcfg.rays_per_step)
        n_pseu = min(rcfg.pseudo_points_per_step, model.num_points)
        pseu_idx = rng.choice(model.num_points, size=n_pseu, replace=False)
        total, terms, grads = reconstruction_objective(
            model, grid, all_origins[idx], all_dirs[idx], all_rgb[idx],
            views.images, views.cameras, render_cfg, weights, rng,
            extractor=extractor, pseudo_points=model.positions[pseu_idx],
            optimize_density=rcfg.optimize_density,
        )
        if not np.isfinite(total):
            save_checkpoint(ckpt_path, export(step))
            raise TrainingAborted(f"non-finite loss at step {step}", ckpt_path)
        grads = {k: v for k, v in grads.items() if k in trainable}
        lr_latent = cosine_lr(step, max(rcfg.iterations - 1, 1), rcfg.lr_latent_start, rcfg.lr_latent_end)
        lr_app = cosine_lr(step, max(rcfg.iterations - 1, 1), rcfg.lr_appearance_start, rcfg.lr_appearance_end)
        lr = {}
        for name in grads:
            if name.startswith("points/"):
                lr[name] = lr_latent
            elif name.startswith("density/"):
                lr[name] = rcfg.lr_density
            else:
                lr[name] = lr_app
        adam_step(model.store, grads, lr)
        trace.row([step, terms["render"], terms["fc"], terms["pseudo"], terms["tv"], total])
        if progress and (step + 1) % 25 == 0:
            progress(step + 1, rcfg.iterations, terms, time.perf_counter() - t0)
        if rcfg.checkpoint_every and (step + 1) % rcfg.checkpoint_every == 0:
            save_checkpoint(ckpt_path, export(step + 1))
        if rcfg.preview_every and (step + 1) % rcfg.preview_every == 0:
            _write_preview(model, grid, views.cameras[0], render_cfg, out_dir, step + 1)
    ckpt = export(rcfg.iterations)
    save_checkpoint(ckpt_path, ckpt)
    return ckpt


def _write_preview(model, grid, camera, render_cfg, out_dir, step) -> None:
    from pointsdf.cameras import Camera
    from pointsdf.images import save_png
    from pointsdf.renderer import render_image

    scale = 2
    k = camera.intrinsics.copy()
    k[:2] /= scale
    cam = Camera(k, camera.cam_to_world, camera.width // scale, camera.height // scale)
    img, _depth = render_image(model, grid, cam, render_cfg, np.random.default_rng(0))
    save_png(f"{out_dir}/preview_{step:06d}.png", img)


def model_from_checkpoint(ckpt: Checkpoint, run_cfg: RunConfig | None = None) -> tuple[FieldModel, VoxelGrid]:
    """Rebuild a reconstruction model (and its spatial index) from a file."""
    from pointsdf.config import run_config_from_dict

    cfg = run_cfg or run_config_from_dict(ckpt.configs)
    rcfg = cfg.recon
    positions = ckpt.arrays["points/positions"]
    fcfg = FieldConfig(
        num_neighbors=rcfg.num_neighbors,
        radius=cfg.field.radius,
        rbf_lambda=cfg.field.rbf_lambda,
        sdf_fallback=cfg.field.sdf_fallback,
        background=cfg.field.background,
        pe_freqs=cfg.field.pe_freqs,
        latent_init_std=cfg.field.latent_init_std,
        grad_eps=cfg.field.grad_eps,
        log_beta_init=cfg.field.log_beta_init,
    )
    rng = np.random.default_rng(cfg.seed)
    model = FieldModel(positions, fcfg, rng, freeze_geometry=bool(ckpt.meta.get("freeze_geometry", True)))
    for name, arr in ckpt.arrays.items():
        if name == "points/positions":
            continue
        if name in model.store.params:
            if model.store[name].shape != arr.shape:
                raise ValueError(f"array {name!r} shape mismatch in checkpoint")
            model.store.params[name] = arr.astype(np.float64)
    grid = VoxelGrid.build(model.positions, cfg.voxel_grid)
    return model, grid
