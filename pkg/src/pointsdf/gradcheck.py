"""Finite-difference validation of every gradient path.

Central differences are exact oracles away from ReLU kinks; the full
pipeline uses a smaller step than the per-decoder checks because a bias
perturbation shifts every downstream preactivation, and a handful of the
tens of thousands of preactivations in a realistic batch always sit within
~1e-5 of a kink.  Fixed seeds keep the suite deterministic.
"""

from __future__ import annotations

import numpy as np

from pointsdf.autodiff import mlp_forward
from pointsdf.field import (
    DECODER_SPECS,
    FieldConfig,
    FieldModel,
    eval_radiance_batch,
    eval_sdf_batch,
    gather_neighbors,
    radiance_backward,
    sdf_backward,
    sdf_spatial_gradient,
    spatial_gradient_backward,
)
from pointsdf.losses import (
    LossWeights,
    feature_consistency_loss,
    prior_objective,
    reconstruction_objective,
    rendering_loss,
    rendering_loss_backward,
    sdf_loss,
    sdf_loss_backward,
    tv_loss,
)
from pointsdf.renderer import RenderConfig, render_backward, render_rays
from pointsdf.spatial_index import VoxelGrid, VoxelGridConfig

Array = np.ndarray


def _rel(num: Array, ana: Array) -> float:
    num = np.asarray(num, dtype=np.float64)
    ana = np.asarray(ana, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(num), np.abs(ana)), 1e-8)
    return float(np.max(np.abs(num - ana) / denom))


def _fd_params(
    loss_fn, store, grads: dict, names, rng, h: float, per_block: int = 8, skip_floor: float = 1e-8
) -> float:
    """Compare analytic grads against central differences on a deterministic
    random subset of coordinates per parameter block.

    Coordinates where both sides sit below `skip_floor` are skipped: a
    derivative that is truly ~zero (e.g. any uniform SDF shift cancels in the
    interpolant and in central differences of it) leaves only cancellation
    noise in the numeric estimate, which says nothing about the backward
    pass.  Every coordinate above the floor must meet the relative bar.
    """
    worst = 0.0
    for name in names:
        arr = store.params[name]
        g = np.asarray(grads.get(name, np.zeros_like(arr)))
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        k = min(per_block, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        for c in coords:
            old = flat[c]
            flat[c] = old + h
            fp = loss_fn()
            flat[c] = old - h
            fm = loss_fn()
            flat[c] = old
            num = (fp - fm) / (2.0 * h)
            if max(abs(num), abs(gflat[c])) < skip_floor:
                continue
            worst = max(worst, _rel(num, gflat[c]))
    return worst


def _toy_setup(seed: int = 0, n_points: int = 40):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.4, 0.4, (n_points, 3))
    cfg = FieldConfig(num_neighbors=4, radius=0.45, rbf_lambda=18.0)
    model = FieldModel(pts, cfg, rng)
    grid = model.build_grid(VoxelGridConfig(voxel_size=(0.16, 0.16, 0.16)))
    return rng, model, grid


def check_decoders(h: float = 1e-6, per_block: int = 6) -> dict[str, float]:
    """FD check of each decoder MLP in isolation (params and inputs)."""
    out = {}
    for name, spec in DECODER_SPECS.items():
        rng = np.random.default_rng(hash(name) % 2**31)
        from pointsdf.autodiff import ParameterStore, mlp_backward, mlp_init

        store = ParameterStore()
        mlp_init(spec, rng, name, store)
        x = rng.normal(0.0, 0.5, size=(5, spec.widths[0]))
        proj = rng.normal(size=(5, spec.widths[-1]))

        def loss():
            y, _ = mlp_forward(spec, store, name, x)
            return float((y * proj).sum())

        y, tape = mlp_forward(spec, store, name, x)
        grads, dx = mlp_backward(spec, store, name, tape, proj)
        worst = _fd_params(loss, store, grads, store.names(name + "/"), rng, h, per_block)
        # input gradients
        for c in rng.choice(x.size, size=min(8, x.size), replace=False):
            flat = x.reshape(-1)
            old = flat[c]
            flat[c] = old + h
            fp = loss()
            flat[c] = old - h
            fm = loss()
            flat[c] = old
            worst = max(worst, _rel((fp - fm) / (2.0 * h), dx.reshape(-1)[c]))
        out[name] = worst
    return out


def check_field_gradients(h: float = 1e-6, per_block: int = 6) -> dict[str, float]:
    """FD through the interpolated SDF / radiance evaluation."""
    rng, model, grid = _toy_setup(1)
    x = rng.uniform(-0.35, 0.35, (8, 3))
    dirs = rng.normal(size=(8, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    nb = gather_neighbors(model, grid, x)
    s, tape = eval_sdf_batch(model, nb)
    proj_s = rng.normal(size=s.shape)
    grads_s = sdf_backward(model, tape, proj_s)

    def loss_s():
        s2, _ = eval_sdf_batch(model, gather_neighbors(model, grid, x), with_tape=False)
        return float((s2 * proj_s).sum())

    names_geo = ["points/geo_feat"] + model.store.names("geo_local/") + model.store.names("sdf_head/")
    out = {"field_sdf": _fd_params(loss_s, model.store, grads_s, names_geo, rng, h, per_block)}

    rgb, rtape = eval_radiance_batch(model, nb, dirs)
    proj_c = rng.normal(size=rgb.shape)
    grads_c = radiance_backward(model, rtape, proj_c)

    def loss_c():
        r2, _ = eval_radiance_batch(model, gather_neighbors(model, grid, x), dirs, with_tape=False)
        return float((r2 * proj_c).sum())

    names_app = ["points/app_feat"] + model.store.names("app_local/") + model.store.names("radiance_head/")
    out["field_radiance"] = _fd_params(loss_c, model.store, grads_c, names_app, rng, h, per_block)

    g, gtape = sdf_spatial_gradient(model, grid, x, with_tape=True)
    proj_g = rng.normal(size=g.shape)
    grads_g = spatial_gradient_backward(model, gtape, proj_g)

    def loss_g():
        g2, _ = sdf_spatial_gradient(model, grid, x)
        return float((g2 * proj_g).sum())

    out["field_spatial_gradient"] = _fd_params(loss_g, model.store, grads_g, names_geo, rng, h, per_block, skip_floor=1e-5)
    return out


def check_losses(h: float = 1e-6, per_block: int = 6) -> dict[str, float]:
    """FD through each loss term's hand-derived backward."""
    rng = np.random.default_rng(7)
    out = {}

    s_gt = rng.normal(0.0, 0.2, size=40)
    s_hat = s_gt + rng.normal(0.0, 0.05, size=40)
    d = sdf_loss_backward(s_gt, s_hat)
    num = np.empty_like(s_hat)
    for i in range(len(s_hat)):
        old = s_hat[i]
        s_hat[i] = old + h
        fp = sdf_loss(s_gt, s_hat)
        s_hat[i] = old - h
        fm = sdf_loss(s_gt, s_hat)
        s_hat[i] = old
        num[i] = (fp - fm) / (2.0 * h)
    out["sdf_loss"] = _rel(num, d)

    a = rng.uniform(0.1, 0.9, size=(12, 3))
    b = rng.uniform(0.1, 0.9, size=(12, 3))
    d = rendering_loss_backward(a, b)
    num = np.empty_like(a)
    for c in range(a.size):
        flat = a.reshape(-1)
        old = flat[c]
        flat[c] = old + h
        fp = rendering_loss(a, b)
        flat[c] = old - h
        fm = rendering_loss(a, b)
        flat[c] = old
        num.reshape(-1)[c] = (fp - fm) / (2.0 * h)
    out["rendering_loss"] = _rel(num, d)

    rng2, model, grid = _toy_setup(3)
    lt, tv_g = tv_loss(model, grid, "geometry", with_grad=True)
    name = "points/geo_feat"
    arr = model.store[name]
    numg = np.zeros_like(arr)
    for c in rng2.choice(arr.size, size=12, replace=False):
        flat = arr.reshape(-1)
        old = flat[c]
        flat[c] = old + h
        fp = tv_loss(model, grid, "geometry")
        flat[c] = old - h
        fm = tv_loss(model, grid, "geometry")
        flat[c] = old
        numg.reshape(-1)[c] = (fp - fm) / (2.0 * h)
        out["tv_loss"] = max(out.get("tv_loss", 0.0), _rel(numg.reshape(-1)[c], tv_g[name].reshape(-1)[c]))

    # feature consistency: points against synthetic smooth images
    from pointsdf.cameras import look_at_camera

    cams = [
        look_at_camera((0.0, -1.6, 0.6), (0, 0, 0), 48, 48, 45.0),
        look_at_camera((1.2, -1.0, 0.6), (0, 0, 0), 48, 48, 45.0),
        look_at_camera((-1.2, -1.0, 0.6), (0, 0, 0), 48, 48, 45.0),
    ]
    yy, xx = np.meshgrid(np.arange(48), np.arange(48), indexing="ij")
    images = [
        np.stack([np.sin(0.21 * xx + i), np.cos(0.17 * yy - 0.5 * i), np.sin(0.13 * (xx + yy))], axis=2) * 0.5 + 0.5
        for i in range(3)
    ]
    pts = rng.uniform(-0.25, 0.25, (10, 3))
    lfc, d_pts = feature_consistency_loss(pts, images, cams, with_grad=True)
    num = np.zeros_like(pts)
    for c in rng.choice(pts.size, size=12, replace=False):
        flat = pts.reshape(-1)
        old = flat[c]
        flat[c] = old + h
        fp = feature_consistency_loss(pts, images, cams)
        flat[c] = old - h
        fm = feature_consistency_loss(pts, images, cams)
        flat[c] = old
        num.reshape(-1)[c] = (fp - fm) / (2.0 * h)
        out["feature_consistency"] = max(
            out.get("feature_consistency", 0.0), _rel(num.reshape(-1)[c], d_pts.reshape(-1)[c])
        )
    return out


def check_objectives(h: float = 1e-6, per_block: int = 4) -> dict[str, float]:
    """FD through the combined phase objectives (all loss terms and the full
    pixel pipeline together)."""
    out = {}

    rng, model, grid = _toy_setup(11)
    inst = {
        "model": model,
        "grid": grid,
        "query_x": rng.uniform(-0.35, 0.35, (24, 3)),
        "query_s": rng.normal(0.0, 0.2, size=24),
        "eik_x": rng.uniform(-0.3, 0.3, (6, 3)),
    }
    weights = LossWeights()

    def loss_p():
        t, _, _ = prior_objective([inst], weights)
        return t

    _, _, grads = prior_objective([inst], weights)
    names = ["points/geo_feat"] + model.store.names("geo_local/") + model.store.names("sdf_head/")
    out["prior_objective"] = _fd_params(loss_p, model.store, grads, names, rng, h, per_block, skip_floor=1e-6)

    # full pixel pipeline with fixed sample positions
    rng, model, grid = _toy_setup(13, n_points=50)
    rcfg = RenderConfig(n_coarse=8, n_fine=8)
    o = np.array([[0.0, 0.0, -1.8], [0.15, 0.1, -1.8], [-0.2, 0.05, -1.8]])
    d = np.tile([[0.0, 0.0, 1.0]], (3, 1))
    seed_bundle = render_rays(model, grid, o, d, rcfg, np.random.default_rng(4), with_tape=True)
    fixed_t = seed_bundle.t.copy()

    def fwd():
        return render_rays(model, grid, o, d, rcfg, np.random.default_rng(4), with_tape=True, fixed_t=fixed_t)

    bundle = fwd()
    proj = np.random.default_rng(5).normal(size=bundle.color.shape)

    def loss_r():
        return float((fwd().color * proj).sum())

    grads = render_backward(model, bundle, proj)
    names = [
        "points/geo_feat", "points/app_feat", "density/log_beta",
    ] + [n for dec in DECODER_SPECS for n in model.store.names(dec + "/")]
    out["pixel_pipeline"] = _fd_params(loss_r, model.store, grads, names, rng, h, per_block, skip_floor=5e-6)
    return out


def run_all(verbose: bool = False) -> dict[str, float]:
    results = {}
    results.update(check_decoders())
    results.update(check_field_gradients())
    results.update(check_losses())
    results.update(check_objectives())
    if verbose:
        for k, v in results.items():
            status = "ok" if v < 1e-4 else "FAIL"
            print(f"{k:>24s}: {v:.3e} [{status}]")
    return results
