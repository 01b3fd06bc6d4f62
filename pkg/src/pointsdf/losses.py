"""Training objectives for both phases.

Every loss is mean-normalized over its natural index set (queries, rays,
directed latent pairs, surface-point/view terms) so the configured weights
are independent of batch sizes.  Each loss has a matching hand-derived
backward; the finite-difference suite in the tests pins them down.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from pointsdf.cameras import Camera
from pointsdf.field import (
    FieldModel,
    eval_sdf_batch,
    gather_neighbors,
    sdf_backward,
    sdf_spatial_gradient,
    spatial_gradient_backward,
)
from pointsdf.renderer import RenderConfig, render_backward, render_rays, zero_crossings_batch
from pointsdf.spatial_index import VoxelGrid

Array = np.ndarray


@dataclass(frozen=True)
class LossWeights:
    lambda_tv: float = 1e-2
    lambda_eik: float = 1e-3  # prior phase
    lambda_fc: float = 0.5  # reconstruction phase
    lambda_pseu: float = 0.5
    sdf_eps: float = 0.01

    def __post_init__(self):
        if min(self.lambda_tv, self.lambda_eik, self.lambda_fc, self.lambda_pseu) < 0 or self.sdf_eps <= 0:
            raise ValueError("weights must be non-negative and sdf_eps positive")


# -- elementary losses --------------------------------------------------------


def sdf_loss(s: Array, s_hat: Array, eps: float = 0.01) -> float:
    """Surface-weighted absolute error: mean |s - s_hat| / (|s| + eps)."""
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if len(s) == 0:
        return 0.0
    return float(np.mean(np.abs(s - s_hat) / (np.abs(s) + eps)))


def sdf_loss_backward(s: Array, s_hat: Array, eps: float = 0.01) -> Array:
    """d loss / d s_hat."""
    n = max(len(s), 1)
    return np.sign(s_hat - s) / (np.abs(s) + eps) / n


def eikonal_loss(gradients: Array) -> float:
    """Mean squared deviation of the gradient norm from 1."""
    g = np.atleast_2d(np.asarray(gradients, dtype=np.float64))
    if len(g) == 0:
        return 0.0
    return float(np.mean((np.linalg.norm(g, axis=1) - 1.0) ** 2))


def eikonal_loss_backward(gradients: Array) -> Array:
    g = np.atleast_2d(np.asarray(gradients, dtype=np.float64))
    n = np.linalg.norm(g, axis=1)
    safe = np.where(n > 0, n, 1.0)
    scale = np.where(n > 0, 2.0 * (n - 1.0) / safe, 0.0)
    return scale[:, None] * g / max(len(g), 1)


def rendering_loss(rendered: Array, reference: Array) -> float:
    """Mean over pixels of the channel-summed L1 color error."""
    a = np.atleast_2d(np.asarray(rendered, dtype=np.float64))
    b = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError("batch shapes differ")
    return float(np.abs(a - b).sum(axis=-1).mean())


def rendering_loss_backward(rendered: Array, reference: Array) -> Array:
    a = np.atleast_2d(np.asarray(rendered, dtype=np.float64))
    b = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    return np.sign(a - b) / len(a)


def tv_loss(
    model: FieldModel, grid: VoxelGrid, which: str = "geometry", with_grad: bool = False
) -> float | tuple[float, dict[str, Array]]:
    """Latent smoothness over each point's K-neighborhood: mean over directed
    pairs (self excluded) of ||f_i - f_k||_1 / ||p_i - p_k||_2."""
    if which not in ("geometry", "appearance"):
        raise ValueError("which must be 'geometry' or 'appearance'")
    name = f"{model.latent_prefix}/geo_feat" if which == "geometry" else f"{model.latent_prefix}/app_feat"
    feats = model.store[name]
    pos = model.positions
    nbr = grid.query_batch(pos, model.cfg.num_neighbors + 1, radius=model.cfg.radius)
    src = np.repeat(np.arange(len(pos)), nbr.shape[1])
    dst = nbr.ravel()
    keep = (dst >= 0) & (dst != src)
    src, dst = src[keep], dst[keep]
    # at most K directed pairs per source point (self was queried as K+1th)
    seg_start = np.searchsorted(src, np.arange(len(pos)))
    rank = np.arange(len(src)) - seg_start[src]
    sel = rank < model.cfg.num_neighbors
    src, dst = src[sel], dst[sel]
    dist = np.linalg.norm(pos[src] - pos[dst], axis=1)
    ok = dist > 0
    if not ok.all():
        warnings.warn("coincident points in TV neighborhoods were skipped", stacklevel=2)
        src, dst, dist = src[ok], dst[ok], dist[ok]
    if len(src) == 0:
        return (0.0, {}) if with_grad else 0.0
    diff = feats[src] - feats[dst]
    loss = float((np.abs(diff).sum(axis=1) / dist).mean())
    if not with_grad:
        return loss
    from pointsdf.field import scatter_sum

    g_pair = np.sign(diff) / dist[:, None] / len(src)
    g = scatter_sum(g_pair, src, len(pos)) - scatter_sum(g_pair, dst, len(pos))
    return loss, {name: g}


def pseudo_sdf_loss(model: FieldModel, grid: VoxelGrid, points: Array) -> float:
    """Mean |sdf| at the given positions (normally the neural points, which
    should sit on the zero level set)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(pts) == 0:
        return 0.0
    nb = gather_neighbors(model, grid, pts)
    s, _ = eval_sdf_batch(model, nb, with_tape=False)
    return float(np.abs(s).mean())


# -- feature extractors --------------------------------------------------------


class BilinearRgbExtractor:
    """3-d feature: bilinear RGB at a continuous image coordinate."""

    dim = 3
    margin = 0.5

    def sample(self, image: Array, uv: Array) -> tuple[Array, Array]:
        """Returns (features [N, dim], jacobian d feat/d uv [N, dim, 2])."""
        return _bilinear(image, uv)


class PatchRgbExtractor:
    """27-d feature: 3x3 patch of bilinear RGB taps around the coordinate."""

    dim = 27
    margin = 1.5

    def sample(self, image: Array, uv: Array) -> tuple[Array, Array]:
        feats, jacs = [], []
        for dv in (-1.0, 0.0, 1.0):
            for du in (-1.0, 0.0, 1.0):
                f, j = _bilinear(image, uv + np.array([du, dv]))
                feats.append(f)
                jacs.append(j)
        return np.concatenate(feats, axis=1), np.concatenate(jacs, axis=1)


def _bilinear(image: Array, uv: Array) -> tuple[Array, Array]:
    h, w = image.shape[:2]
    fx = np.clip(uv[:, 0] - 0.5, 0.0, w - 1.0)
    fy = np.clip(uv[:, 1] - 0.5, 0.0, h - 1.0)
    x0 = np.clip(np.floor(fx).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(fy).astype(np.int64), 0, h - 2)
    ax = (fx - x0)[:, None]
    ay = (fy - y0)[:, None]
    i00 = image[y0, x0]
    i01 = image[y0, x0 + 1]
    i10 = image[y0 + 1, x0]
    i11 = image[y0 + 1, x0 + 1]
    feat = (1 - ay) * ((1 - ax) * i00 + ax * i01) + ay * ((1 - ax) * i10 + ax * i11)
    dfu = (1 - ay) * (i01 - i00) + ay * (i11 - i10)
    dfv = (1 - ax) * (i10 - i00) + ax * (i11 - i01)
    return feat, np.stack([dfu, dfv], axis=2)


def make_extractor(name: str):
    if name == "bilinear_rgb":
        return BilinearRgbExtractor()
    if name == "patch3_rgb":
        return PatchRgbExtractor()
    raise ValueError(f"unknown feature extractor {name!r}")


# -- feature consistency ---------------------------------------------------------


def feature_consistency_loss(
    surface_points: Array,
    images: list[Array],
    cameras: list[Camera],
    extractor=None,
    ref_index: int = 0,
    with_grad: bool = False,
):
    """Mean L1 feature difference between each surface point's projection in
    every view and in the reference view.  (point, view) terms without a
    valid projection are dropped from both the sum and the count; points
    invisible in the reference view are dropped entirely."""
    if len(images) < 2:
        raise ValueError("need at least two views")
    extractor = extractor or PatchRgbExtractor()
    pts = np.atleast_2d(np.asarray(surface_points, dtype=np.float64))
    d_points = np.zeros_like(pts)
    if len(pts) == 0:
        warnings.warn("no surface points for the feature-consistency term", stacklevel=2)
        return (0.0, d_points) if with_grad else 0.0

    ref_cam = cameras[ref_index]
    uv0, _z0, ok0 = ref_cam.project(pts)
    ok0 &= _inside(uv0, ref_cam, extractor.margin)
    keep = np.where(ok0)[0]
    if len(keep) == 0:
        warnings.warn("no surface points visible in the reference view", stacklevel=2)
        return (0.0, d_points) if with_grad else 0.0
    p = pts[keep]
    f0, j0 = extractor.sample(images[ref_index], uv0[keep])
    juv0 = ref_cam.project_gradient(p)  # [M, 2, 3]

    total = 0.0
    count = 0
    d_p = np.zeros_like(p)
    for vi, (img, cam) in enumerate(zip(images, cameras)):
        if vi == ref_index:
            count += len(p)  # reference terms are identically zero but counted
            continue
        uv, _z, ok = cam.project(p)
        ok &= _inside(uv, cam, extractor.margin)
        if not ok.any():
            continue
        f, j = extractor.sample(img, uv[ok])
        diff = f - f0[ok]
        total += float(np.abs(diff).sum())
        count += int(ok.sum())
        if with_grad:
            sign = np.sign(diff)
            d_uv = np.einsum("nd,ndk->nk", sign, j)
            d_uv0 = -np.einsum("nd,ndk->nk", sign, j0[ok])
            juv = cam.project_gradient(p[ok])
            d_p[ok] += np.einsum("nk,nkj->nj", d_uv, juv)
            d_p[ok] += np.einsum("nk,nkj->nj", d_uv0, juv0[ok])
    if count == 0:
        warnings.warn("no valid surface-point projections", stacklevel=2)
        return (0.0, d_points) if with_grad else 0.0
    loss = total / count
    if not with_grad:
        return loss
    d_points[keep] = d_p / count
    return loss, d_points


def _inside(uv: Array, cam: Camera, margin: float) -> Array:
    return (
        (uv[:, 0] >= margin)
        & (uv[:, 0] <= cam.width - margin)
        & (uv[:, 1] >= margin)
        & (uv[:, 1] <= cam.height - margin)
    )


# -- phase objectives -------------------------------------------------------------


def prior_objective(
    instances: list[dict],
    weights: LossWeights,
) -> tuple[float, dict[str, float], dict[str, Array]]:
    """One optimization step's loss and gradients for the local-prior phase.

    Each instance dict carries: model (sharing the decoder store), grid,
    query_x [Q, 3], query_s [Q], eik_x [E, 3].  Queries with no neighbors in
    range carry no signal and are excluded from the distance loss.
    """
    grads: dict[str, Array] = {}
    sdf_terms: list[tuple] = []
    eik_terms: list[tuple] = []
    tv_total = 0.0
    n_sdf = 0
    n_eik = 0

    for inst in instances:
        model, grid = inst["model"], inst["grid"]
        nb = gather_neighbors(model, grid, inst["query_x"])
        s_hat, tape = eval_sdf_batch(model, nb)
        mask = nb.has_neighbors
        sdf_terms.append((model, tape, inst["query_s"], s_hat, mask))
        n_sdf += int(mask.sum())
        if weights.lambda_eik > 0 and len(inst.get("eik_x", ())):
            g, gtape = sdf_spatial_gradient(model, grid, inst["eik_x"], with_tape=True)
            eik_terms.append((model, gtape, g))
            n_eik += len(g)

    sdf_total = 0.0
    for model, tape, s_gt, s_hat, mask in sdf_terms:
        err = np.abs(s_gt - s_hat) / (np.abs(s_gt) + weights.sdf_eps)
        sdf_total += float(err[mask].sum())
        d_s = np.where(mask, np.sign(s_hat - s_gt) / (np.abs(s_gt) + weights.sdf_eps), 0.0) / max(n_sdf, 1)
        sdf_backward(model, tape, d_s, grads)
    sdf_total /= max(n_sdf, 1)

    eik_total = 0.0
    for model, gtape, g in eik_terms:
        norms = np.linalg.norm(g, axis=1)
        eik_total += float(((norms - 1.0) ** 2).sum())
        safe = np.where(norms > 0, norms, 1.0)
        d_g = np.where(norms[:, None] > 0, 2.0 * (norms - 1.0)[:, None] * g / safe[:, None], 0.0)
        d_g *= weights.lambda_eik / max(n_eik, 1)
        spatial_gradient_backward(model, gtape, d_g, grads)
    eik_total /= max(n_eik, 1)

    for inst in instances:
        tv, tv_g = tv_loss(inst["model"], inst["grid"], "geometry", with_grad=True)
        tv_total += tv / len(instances)
        for k, v in tv_g.items():
            scaled = v * (weights.lambda_tv / len(instances))
            grads[k] = grads.get(k, 0.0) + scaled

    terms = {"sdf": sdf_total, "tv": tv_total, "eikonal": eik_total}
    total = sdf_total + weights.lambda_tv * tv_total + weights.lambda_eik * eik_total
    return total, terms, grads


def reconstruction_objective(
    model: FieldModel,
    grid: VoxelGrid,
    origins: Array,
    dirs: Array,
    gt_rgb: Array,
    images: list[Array],
    cameras: list[Camera],
    render_cfg: RenderConfig,
    weights: LossWeights,
    rng: np.random.Generator,
    extractor=None,
    pseudo_points: Array | None = None,
    optimize_density: bool = True,
) -> tuple[float, dict[str, float], dict[str, Array]]:
    """One reconstruction step: photometric, feature-consistency, pseudo-SDF
    and latent-TV terms with gradients for the unfrozen parameters."""
    grads: dict[str, Array] = {}
    bundle = render_rays(model, grid, origins, dirs, render_cfg, rng, with_tape=True)

    l_ren = rendering_loss(bundle.color, gt_rgb)
    d_color = rendering_loss_backward(bundle.color, gt_rgb)

    # feature consistency on zero-crossing surface points of this batch's rays
    l_fc = 0.0
    d_sdf_extra = None
    if weights.lambda_fc > 0 and bundle.t.size:
        t_star, j_idx, found = zero_crossings_batch(bundle.t, bundle.sdf)
        rows = np.where(found)[0]
        if len(rows):
            ov = bundle.origins[bundle.valid][rows]
            dv = bundle.dirs[bundle.valid][rows]
            pts = ov + t_star[rows, None] * dv
            l_fc, d_pts = feature_consistency_loss(
                pts, images, cameras, extractor, ref_index=0, with_grad=True
            )
            d_tstar = np.einsum("nj,nj->n", d_pts, dv)
            j = j_idx[rows]
            s0 = bundle.sdf[rows, j]
            s1 = bundle.sdf[rows, j + 1]
            t0 = bundle.t[rows, j]
            t1 = bundle.t[rows, j + 1]
            den = (s0 - s1) ** 2
            d_s0 = d_tstar * s1 * (t0 - t1) / den * weights.lambda_fc
            d_s1 = d_tstar * s0 * (t1 - t0) / den * weights.lambda_fc
            n_samp = bundle.t.shape[1]
            d_sdf_extra = np.zeros(bundle.sdf.size)
            np.add.at(d_sdf_extra, rows * n_samp + j, d_s0)
            np.add.at(d_sdf_extra, rows * n_samp + j + 1, d_s1)

    render_backward(
        model, bundle, d_color, d_sdf_extra=d_sdf_extra, sum_into=grads, optimize_density=optimize_density
    )

    l_pseu = 0.0
    if weights.lambda_pseu > 0:
        pts = model.positions if pseudo_points is None else pseudo_points
        nb = gather_neighbors(model, grid, pts)
        s, tape = eval_sdf_batch(model, nb)
        l_pseu = float(np.abs(s).mean())
        d_s = np.sign(s) * (weights.lambda_pseu / max(len(s), 1))
        sdf_backward(model, tape, d_s, grads)

    l_tv, tv_g = tv_loss(model, grid, "geometry", with_grad=True)
    for k, v in tv_g.items():
        grads[k] = grads.get(k, 0.0) + v * weights.lambda_tv

    terms = {"render": l_ren, "fc": l_fc, "pseudo": l_pseu, "tv": l_tv}
    total = l_ren + weights.lambda_fc * l_fc + weights.lambda_pseu * l_pseu + weights.lambda_tv * l_tv
    return total, terms, grads
