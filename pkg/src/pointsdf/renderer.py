"""Differentiable volume rendering on top of the neural point field.

Signed distance turns into density through a piecewise Laplace-CDF profile;
because the field stores distances negative-inside, the profile is applied
to the negated distance so density saturates at alpha deep inside a surface
and vanishes in free space.  Samples with no neighbors in range contribute
exactly zero density, so empty regions never occlude the background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pointsdf.field import (
    FieldModel,
    NeighborBatch,
    RadianceTape,
    SdfTape,
    eval_radiance_batch,
    eval_sdf_batch,
    gather_neighbors,
    radiance_backward,
    sdf_backward,
)
from pointsdf.spatial_index import VoxelGrid

Array = np.ndarray


@dataclass(frozen=True)
class RenderConfig:
    n_coarse: int = 64
    n_fine: int = 64
    bounds: tuple[float, float, float, float, float, float] = (-1.0, -1.0, -1.0, 1.0, 1.0, 1.0)
    radiance_weight_cutoff: float = 0.0  # skip radiance decoding below this weight
    stratified: bool = True

    def __post_init__(self):
        if self.n_coarse < 1 or self.n_fine < 0:
            raise ValueError("need n_coarse >= 1 and n_fine >= 0")


# -- density -----------------------------------------------------------------


def density_from_sdf(s: Array, alpha: float, beta: float) -> Array:
    """Density of the piecewise Laplace-CDF family, evaluated at the
    inside-positive argument u = -s (s is negative inside)."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    u = -np.asarray(s, dtype=np.float64)
    return alpha * np.where(u <= 0, 0.5 * np.exp(np.minimum(u, 0.0) / beta), 1.0 - 0.5 * np.exp(-np.maximum(u, 0.0) / beta))


def density_with_grad(s: Array, log_beta: float) -> tuple[Array, Array, Array]:
    """(sigma, d sigma/d s, d sigma/d log_beta) under the alpha = 1/beta,
    beta = exp(log_beta) coupling."""
    beta = np.exp(log_beta)
    alpha = 1.0 / beta
    u = -np.asarray(s, dtype=np.float64)
    sigma = density_from_sdf(s, alpha, beta)
    dsig_du = alpha / (2.0 * beta) * np.exp(-np.abs(u) / beta)
    dsig_ds = -dsig_du
    # Euler relation for sigma(u; beta) = (1/beta) * Psi(u / beta)
    dsig_dlogbeta = -sigma - u * dsig_du
    return sigma, dsig_ds, dsig_dlogbeta


# -- ray/box intersection and sampling ----------------------------------------


def intersect_bounds(origins: Array, dirs: Array, bounds) -> tuple[Array, Array, Array]:
    lo = np.asarray(bounds[:3], dtype=np.float64)
    hi = np.asarray(bounds[3:], dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    swap_lo = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    swap_hi = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    near = np.maximum(swap_lo.max(axis=1), 1e-6)
    far = swap_hi.min(axis=1)
    valid = far > near
    return near, far, valid


def stratified_samples(near: Array, far: Array, n: int, rng: np.random.Generator, jitter: bool = True) -> Array:
    """One sample per stratum of [near, far] per ray."""
    r = len(near)
    u = rng.uniform(size=(r, n)) if jitter else np.full((r, n), 0.5)
    steps = (np.arange(n) + u) / n
    return near[:, None] + (far - near)[:, None] * steps


def sample_importance(
    t_coarse: Array, weights: Array, far: Array, n_fine: int, rng: np.random.Generator
) -> Array:
    """Inverse-CDF draws from the piecewise-constant PDF over coarse
    intervals [t_i, t_{i+1}) (the last interval ends at far)."""
    r, nc = t_coarse.shape
    edges = np.concatenate([t_coarse, far[:, None]], axis=1)
    w = np.maximum(weights, 0.0) + 1e-12
    totals = w.sum(axis=1)
    uniform_rows = totals < 1e-9
    if uniform_rows.any():
        w[uniform_rows] = 1.0
        totals = w.sum(axis=1)
    cdf = np.concatenate([np.zeros((r, 1)), np.cumsum(w, axis=1) / totals[:, None]], axis=1)
    cdf[:, -1] = 1.0
    u = rng.uniform(size=(r, n_fine))
    out = np.empty((r, n_fine))
    for i in range(r):  # piecewise-linear inverse CDF == piecewise-constant PDF
        out[i] = np.interp(u[i], cdf[i], edges[i])
    return out


def sample_ray(
    ray_origin: Array,
    ray_dir: Array,
    near: float,
    far: float,
    n_coarse: int,
    n_fine: int,
    model: FieldModel,
    grid: VoxelGrid,
    rng: np.random.Generator,
) -> Array:
    """Sample positions for one ray: stratified coarse pass, then inverse-CDF
    resampling of the coarse weight distribution; union sorted ascending."""
    near_a = np.array([near], dtype=np.float64)
    far_a = np.array([far], dtype=np.float64)
    t_c = stratified_samples(near_a, far_a, n_coarse, rng)
    if n_fine == 0:
        return t_c[0]
    x = ray_origin[None, :] + t_c[0][:, None] * ray_dir[None, :]
    nb = gather_neighbors(model, grid, x)
    s, _ = eval_sdf_batch(model, nb, with_tape=False)
    sigma = np.where(nb.has_neighbors, density_from_sdf(s, model.alpha, model.beta), 0.0)
    delta = np.diff(np.append(t_c[0], far))
    w, _t = compute_weights(sigma[None, :], delta[None, :])
    t_f = sample_importance(t_c, w, far_a, n_fine, rng)
    return np.sort(np.concatenate([t_c[0], t_f[0]]))


# -- compositing ---------------------------------------------------------------


def compute_weights(sigma: Array, delta: Array) -> tuple[Array, Array]:
    """Per-sample compositing weights and transmittance for [R, S] batches."""
    fe = sigma * delta
    acc = np.concatenate([np.zeros((fe.shape[0], 1)), np.cumsum(fe, axis=1)[:, :-1]], axis=1)
    transmittance = np.exp(-acc)
    weights = transmittance * (1.0 - np.exp(-fe))
    return weights, transmittance


def composite(sigma: Array, delta: Array, rgb: Array, background) -> tuple[Array, Array, Array]:
    """Volume quadrature: color = sum(w_i * rgb_i) + (1 - sum w_i) * bg."""
    weights, transmittance = compute_weights(sigma, delta)
    bg = np.asarray(background, dtype=np.float64)
    color = np.einsum("rs,rsc->rc", weights, rgb) + (1.0 - weights.sum(axis=1))[:, None] * bg
    return color, weights, transmittance


def composite_backward(
    delta: Array,
    rgb: Array,
    background,
    weights: Array,
    transmittance: Array,
    d_color: Array,
    d_weights: Array | None = None,
) -> tuple[Array, Array]:
    """Gradients of a scalar loss w.r.t. sigma and rgb given d(loss)/d(color)
    and optionally direct d(loss)/d(weights)."""
    bg = np.asarray(background, dtype=np.float64)
    g_w = np.einsum("rc,rsc->rs", d_color, rgb - bg)
    if d_weights is not None:
        g_w = g_w + d_weights
    wg = weights * g_w
    suffix = np.cumsum(wg[:, ::-1], axis=1)[:, ::-1] - wg  # sum over k > i
    d_sigma = delta * ((transmittance - weights) * g_w - suffix)
    d_rgb = weights[:, :, None] * d_color[:, None, :]
    return d_sigma, d_rgb


# -- surface point estimators ---------------------------------------------------


def surface_point_zero_crossing(t: Array, s: Array) -> tuple[float, int] | None:
    """First outside-to-inside crossing: linear-interpolation root between the
    adjacent samples, or None if the ray never crosses the surface."""
    cross = (s[:-1] >= 0.0) & (s[1:] < 0.0)
    idx = np.flatnonzero(cross)
    if len(idx) == 0:
        return None
    j = int(idx[0])
    t_star = (s[j] * t[j + 1] - s[j + 1] * t[j]) / (s[j] - s[j + 1])
    return float(t_star), j


def zero_crossings_batch(t: Array, s: Array) -> tuple[Array, Array, Array]:
    """Vectorized first crossing per ray: (t_star [R], j [R], found [R])."""
    cross = (s[:, :-1] >= 0.0) & (s[:, 1:] < 0.0)
    found = cross.any(axis=1)
    j = np.argmax(cross, axis=1)
    rows = np.arange(len(t))
    s0 = s[rows, j]
    s1 = s[rows, j + 1]
    t0 = t[rows, j]
    t1 = t[rows, j + 1]
    denom = np.where(found, s0 - s1, 1.0)
    t_star = (s0 * t1 - s1 * t0) / denom
    return np.where(found, t_star, np.nan), j, found


def surface_point_weighted(t: Array, w: Array) -> float | None:
    """Rendering-weight weighted mean of sample depths."""
    total = w.sum()
    if total <= 0.0:
        return None
    return float((w * t).sum() / total)


# -- full pixel pipeline ---------------------------------------------------------


@dataclass
class RayBundle:
    """Everything produced while rendering a batch of rays, kept for losses
    and the backward pass.  Invalid rays (missing the bounds box) render as
    pure background and carry no samples."""

    origins: Array
    dirs: Array
    valid: Array  # [R] bool
    t: Array  # [Rv, S]
    delta: Array  # [Rv, S]
    sdf: Array  # [Rv, S]
    sigma: Array  # [Rv, S]
    rgb: Array  # [Rv, S, 3]
    weights: Array  # [Rv, S]
    transmittance: Array  # [Rv, S]
    color: Array  # [R, 3] full batch, background where invalid
    nb: NeighborBatch | None = None
    sdf_tape: SdfTape | None = None
    rad_tape: RadianceTape | None = None
    dsig_ds: Array | None = None
    dsig_dlogbeta: Array | None = None


def render_rays(
    model: FieldModel,
    grid: VoxelGrid,
    origins: Array,
    dirs: Array,
    cfg: RenderConfig,
    rng: np.random.Generator,
    with_tape: bool = False,
    fixed_t: Array | None = None,
) -> RayBundle:
    """Sample, decode and composite a batch of rays.

    Sample positions are drawn per call and treated as constants by the
    backward pass (importance sampling sees the current field but carries no
    gradient); `fixed_t` replays given positions, which finite-difference
    checks of the pipeline rely on.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    r = len(origins)
    near, far, valid = intersect_bounds(origins, dirs, cfg.bounds)
    bg = np.asarray(model.cfg.background, dtype=np.float64)
    color = np.broadcast_to(bg, (r, 3)).copy()
    ov, dv = origins[valid], dirs[valid]
    rv = len(ov)
    n_samples = cfg.n_coarse + cfg.n_fine
    if rv == 0:
        empty = np.zeros((0, n_samples))
        return RayBundle(origins, dirs, valid, empty, empty, empty, empty, np.zeros((0, n_samples, 3)), empty, empty, color)

    nearv, farv = near[valid], far[valid]
    if fixed_t is not None:
        t = np.asarray(fixed_t, dtype=np.float64)
    else:
        t_c = stratified_samples(nearv, farv, cfg.n_coarse, rng, jitter=cfg.stratified)
        if cfg.n_fine > 0:
            x_c = ov[:, None, :] + t_c[..., None] * dv[:, None, :]
            nb_c = gather_neighbors(model, grid, x_c.reshape(-1, 3))
            s_c, _ = eval_sdf_batch(model, nb_c, with_tape=False)
            sig_c = np.where(nb_c.has_neighbors, density_from_sdf(s_c, model.alpha, model.beta), 0.0)
            sig_c = sig_c.reshape(rv, cfg.n_coarse)
            delta_c = np.diff(np.concatenate([t_c, farv[:, None]], axis=1), axis=1)
            w_c, _ = compute_weights(sig_c, delta_c)
            t_f = sample_importance(t_c, w_c, farv, cfg.n_fine, rng)
            t = np.sort(np.concatenate([t_c, t_f], axis=1), axis=1)
        else:
            t = t_c
    delta = np.diff(np.concatenate([t, farv[:, None]], axis=1), axis=1)

    x = (ov[:, None, :] + t[..., None] * dv[:, None, :]).reshape(-1, 3)
    nb = gather_neighbors(model, grid, x)
    s_flat, sdf_tape = eval_sdf_batch(model, nb, with_tape=with_tape)
    sigma_flat, dsig_ds, dsig_dlb = density_with_grad(s_flat, model.log_beta)
    sigma_flat = np.where(nb.has_neighbors, sigma_flat, 0.0)
    dsig_ds = np.where(nb.has_neighbors, dsig_ds, 0.0)
    dsig_dlb = np.where(nb.has_neighbors, dsig_dlb, 0.0)
    sigma = sigma_flat.reshape(rv, -1)
    weights, transmittance = compute_weights(sigma, delta)

    if cfg.radiance_weight_cutoff > 0.0:
        sample_sel = (weights > cfg.radiance_weight_cutoff).reshape(-1)
    else:
        sample_sel = None
    view_dirs = np.repeat(dv, t.shape[1], axis=0)
    rgb_flat, rad_tape = eval_radiance_batch(model, nb, view_dirs, sample_sel, with_tape=with_tape)
    rgb = rgb_flat.reshape(rv, -1, 3)

    color_v = np.einsum("rs,rsc->rc", weights, rgb) + (1.0 - weights.sum(axis=1))[:, None] * bg
    color[valid] = color_v
    return RayBundle(
        origins, dirs, valid, t, delta, s_flat.reshape(rv, -1), sigma, rgb, weights,
        transmittance, color, nb if with_tape else None, sdf_tape, rad_tape,
        dsig_ds if with_tape else None, dsig_dlb if with_tape else None,
    )


def render_backward(
    model: FieldModel,
    bundle: RayBundle,
    d_color: Array,
    d_sdf_extra: Array | None = None,
    d_weights: Array | None = None,
    sum_into: dict[str, Array] | None = None,
    optimize_density: bool = True,
) -> dict[str, Array]:
    """Chain pixel-color gradients (plus optional direct per-sample SDF and
    weight gradients from auxiliary losses) back to latents, appearance
    decoders, geometry decoders (unless frozen), and the density parameter."""
    grads = sum_into if sum_into is not None else {}
    if bundle.sdf_tape is None:
        raise ValueError("render_rays(with_tape=True) required for backward")
    d_sigma, d_rgb = composite_backward(
        bundle.delta, bundle.rgb, model.cfg.background, bundle.weights, bundle.transmittance,
        np.atleast_2d(d_color)[bundle.valid], d_weights,
    )
    d_sigma_flat = d_sigma.reshape(-1)
    d_s = d_sigma_flat * bundle.dsig_ds
    if d_sdf_extra is not None:
        d_s = d_s + d_sdf_extra
    sdf_backward(model, bundle.sdf_tape, d_s, grads)
    radiance_backward(model, bundle.rad_tape, d_rgb.reshape(-1, 3), grads)
    if optimize_density:
        d_lb = float((d_sigma_flat * bundle.dsig_dlogbeta).sum())
        if "density/log_beta" in grads:
            grads["density/log_beta"] = grads["density/log_beta"] + np.array([d_lb])
        else:
            grads["density/log_beta"] = np.array([d_lb])
    return grads


def render_pixel(
    model: FieldModel,
    grid: VoxelGrid,
    ray_origin: Array,
    ray_dir: Array,
    cfg: RenderConfig,
    rng: np.random.Generator,
) -> tuple[Array, dict]:
    """One pixel: color plus the auxiliary per-sample arrays the losses need."""
    bundle = render_rays(model, grid, ray_origin[None, :], ray_dir[None, :], cfg, rng)
    if not bundle.valid[0]:
        return bundle.color[0], {"t": np.array([]), "sdf": np.array([]), "weights": np.array([])}
    return bundle.color[0], {"t": bundle.t[0], "sdf": bundle.sdf[0], "weights": bundle.weights[0]}


def render_image(
    model: FieldModel,
    grid: VoxelGrid,
    camera,
    cfg: RenderConfig,
    rng: np.random.Generator,
    chunk: int = 4096,
) -> tuple[Array, Array]:
    """Full-frame forward render: color image and weighted-mean depth map
    (infinite where the ray accumulates no weight)."""
    origins, dirs = camera.all_rays()
    n = len(origins)
    color = np.zeros((n, 3))
    depth = np.full(n, np.inf)
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        bundle = render_rays(model, grid, origins[sl], dirs[sl], cfg, rng)
        color[sl] = bundle.color
        if bundle.t.size:
            acc = bundle.weights.sum(axis=1)
            dpt = np.where(acc > 1e-6, (bundle.weights * bundle.t).sum(axis=1) / np.maximum(acc, 1e-12), np.inf)
            depth[sl][bundle.valid] = dpt
    h, w = camera.height, camera.width
    return color.reshape(h, w, 3), depth.reshape(h, w)
