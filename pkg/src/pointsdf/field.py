"""The neural point field: latent storage, local decoding, RBF-weighted
interpolation of signed distance and appearance, and finite-difference
spatial SDF gradients.

Decoding is local and translation invariant: every decoder only ever sees a
latent code together with the query position relative to a neighboring
point.  Two decoders regress signed distance (a local-processing MLP
followed by a linear head, pre-trainable and freezable), two regress
radiance (a local-processing MLP whose aggregated features feed a
sigmoid-bounded head conditioned on the raw view direction).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from pointsdf.autodiff import (
    MlpSpec,
    MlpTape,
    ParameterStore,
    mlp_backward,
    mlp_forward,
    mlp_init,
    posenc_dim,
    positional_encoding,
)
from pointsdf.spatial_index import VoxelGrid, VoxelGridConfig

Array = np.ndarray

GEO_LATENT_DIM = 32
APP_LATENT_DIM = 64
HIDDEN_DIM = 128
APP_FEATURE_DIM = 256


@dataclass(frozen=True)
class FieldConfig:
    num_neighbors: int = 8
    radius: float = 0.075
    rbf_lambda: float = float(np.log(10.0) / 0.075**2)  # weight 0.1 at the radius
    sdf_fallback: float = 0.1  # returned where no neighbors are in range
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pe_freqs: int = 6
    latent_init_std: float = 1e-2  # normal with variance 1e-4
    grad_eps: float = 1e-4  # central-difference step for spatial gradients
    log_beta_init: float = float(np.log(0.1))

    def __post_init__(self):
        if self.num_neighbors < 1 or self.radius <= 0 or self.rbf_lambda <= 0:
            raise ValueError("need num_neighbors >= 1, radius > 0, rbf_lambda > 0")


def rbf_weight(x: Array, p: Array, rbf_lambda: float) -> Array:
    """Gaussian kernel exp(-lambda * ||x - p||^2), in (0, 1]."""
    d2 = np.sum((np.asarray(x, dtype=np.float64) - np.asarray(p, dtype=np.float64)) ** 2, axis=-1)
    return np.exp(-rbf_lambda * d2)


GEO_LOCAL_SPEC = MlpSpec((GEO_LATENT_DIM + 3, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM))
SDF_HEAD_SPEC = MlpSpec((HIDDEN_DIM, 1))
APP_LOCAL_SPEC = MlpSpec(
    (APP_LATENT_DIM + posenc_dim(6), HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, APP_FEATURE_DIM), pe_freqs=6
)
RADIANCE_HEAD_SPEC = MlpSpec((APP_FEATURE_DIM + 3, HIDDEN_DIM, 3), out_activation="sigmoid")

DECODER_SPECS = {
    "geo_local": GEO_LOCAL_SPEC,
    "sdf_head": SDF_HEAD_SPEC,
    "app_local": APP_LOCAL_SPEC,
    "radiance_head": RADIANCE_HEAD_SPEC,
}
GEOMETRY_DECODERS = ("geo_local", "sdf_head")
APPEARANCE_DECODERS = ("app_local", "radiance_head")


class FieldModel:
    """Neural point cloud plus its decoders and density parameters.

    Several models may share one ParameterStore (shared decoders) while
    keeping separate latent tables via `latent_prefix` — prior training uses
    one latent table per training shape.  Latents missing from the store are
    created from the documented zero-mean normal; decoders are created only
    when the store itself is new.
    """

    def __init__(
        self,
        positions: Array,
        cfg: FieldConfig,
        rng: np.random.Generator | None = None,
        store: ParameterStore | None = None,
        freeze_geometry: bool = False,
        latent_prefix: str = "points",
        with_appearance: bool = True,
    ):
        self.positions = np.ascontiguousarray(np.atleast_2d(positions), dtype=np.float64)
        self.cfg = cfg
        self.freeze_geometry = freeze_geometry
        self.latent_prefix = latent_prefix
        self.with_appearance = with_appearance
        if store is None:
            store = ParameterStore()
            for name, spec in DECODER_SPECS.items():
                mlp_init(spec, rng, name, store)
        self.store = store
        n = len(self.positions)
        if f"{latent_prefix}/geo_feat" not in store:
            store.add(f"{latent_prefix}/geo_feat", rng.normal(0.0, cfg.latent_init_std, size=(n, GEO_LATENT_DIM)))
        if with_appearance and f"{latent_prefix}/app_feat" not in store:
            store.add(f"{latent_prefix}/app_feat", rng.normal(0.0, cfg.latent_init_std, size=(n, APP_LATENT_DIM)))
        if "density/log_beta" not in store:
            store.add("density/log_beta", np.array([cfg.log_beta_init]))

    @property
    def num_points(self) -> int:
        return len(self.positions)

    @property
    def geo_feat(self) -> Array:
        return self.store[f"{self.latent_prefix}/geo_feat"]

    @property
    def app_feat(self) -> Array:
        return self.store[f"{self.latent_prefix}/app_feat"]

    @property
    def log_beta(self) -> float:
        return float(self.store["density/log_beta"][0])

    @property
    def beta(self) -> float:
        return float(np.exp(self.log_beta))

    @property
    def alpha(self) -> float:
        return 1.0 / self.beta

    def build_grid(self, voxel_cfg: VoxelGridConfig | None = None) -> VoxelGrid:
        return VoxelGrid.build(self.positions, voxel_cfg or VoxelGridConfig())

    def trainable_names(self, optimize_density: bool = True) -> list[str]:
        names = [f"{self.latent_prefix}/geo_feat"]
        if self.with_appearance:
            names.append(f"{self.latent_prefix}/app_feat")
        decoders = APPEARANCE_DECODERS if self.freeze_geometry else GEOMETRY_DECODERS + APPEARANCE_DECODERS
        for d in decoders:
            names += self.store.names(d + "/")
        if optimize_density:
            names.append("density/log_beta")
        return names


# -- batched evaluation ------------------------------------------------------


@dataclass
class NeighborBatch:
    """Shared neighbor gathering for a batch of query positions."""

    x: Array  # [S, 3]
    pair_sample: Array  # [P] sample index, ascending
    pair_point: Array  # [P] neural point index
    rel: Array  # [P, 3] query minus point
    w: Array  # [P] RBF weights
    wsum: Array  # [S]
    has_neighbors: Array  # [S] bool

    @property
    def n_samples(self) -> int:
        return len(self.x)


def gather_neighbors(model: FieldModel, grid: VoxelGrid, x: Array) -> NeighborBatch:
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    nbr = grid.query_batch(x, model.cfg.num_neighbors, radius=model.cfg.radius)
    pair_sample, _col = np.nonzero(nbr >= 0)
    pair_point = nbr[pair_sample, _col]
    rel = x[pair_sample] - model.positions[pair_point]
    w = np.exp(-model.cfg.rbf_lambda * np.einsum("pi,pi->p", rel, rel))
    wsum = np.bincount(pair_sample, weights=w, minlength=len(x))
    return NeighborBatch(x, pair_sample, pair_point, rel, w, wsum, wsum > 0.0)


def _segment_sum(values: Array, seg: Array, n: int) -> Array:
    """Sum rows of `values` by sorted segment ids (deterministic order)."""
    if len(values) == 0:
        return np.zeros((n,) + values.shape[1:], dtype=np.float64)
    starts = np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])
    sums = np.add.reduceat(values, starts, axis=0)
    out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
    out[seg[starts]] = sums
    return out


def scatter_sum(values: Array, idx: Array, n: int) -> Array:
    """Sum rows of `values` into n bins by arbitrary-order indices,
    deterministically (stable sort then contiguous reduction)."""
    if len(values) == 0:
        return np.zeros((n,) + values.shape[1:], dtype=np.float64)
    order = np.argsort(idx, kind="stable")
    return _segment_sum(values[order], idx[order], n)


@dataclass
class SdfTape:
    nb: NeighborBatch
    glp: MlpTape
    head: MlpTape
    s_pair: Array
    sdf: Array


def eval_sdf_batch(model: FieldModel, nb: NeighborBatch, with_tape: bool = True) -> tuple[Array, SdfTape | None]:
    """Interpolated signed distance at every sample of the neighbor batch.
    Samples without neighbors get the configured positive fallback."""
    gin = np.concatenate([model.geo_feat[nb.pair_point], nb.rel], axis=1)
    h, glp_tape = mlp_forward(GEO_LOCAL_SPEC, model.store, "geo_local", gin)
    s_pair_2d, head_tape = mlp_forward(SDF_HEAD_SPEC, model.store, "sdf_head", h)
    s_pair = s_pair_2d[:, 0]
    num = _segment_sum(nb.w * s_pair, nb.pair_sample, nb.n_samples)
    safe = np.where(nb.has_neighbors, nb.wsum, 1.0)
    sdf = np.where(nb.has_neighbors, num / safe, model.cfg.sdf_fallback)
    tape = SdfTape(nb, glp_tape, head_tape, s_pair, sdf) if with_tape else None
    return sdf, tape


def sdf_backward(model: FieldModel, tape: SdfTape, d_sdf: Array, sum_into: dict[str, Array] | None = None) -> dict[str, Array]:
    """Backpropagate per-sample SDF gradients into latents (and the geometry
    decoders unless frozen)."""
    grads = sum_into if sum_into is not None else {}
    nb = tape.nb
    ds = np.where(nb.has_neighbors, d_sdf, 0.0)
    safe = np.where(nb.has_neighbors, nb.wsum, 1.0)
    ds_pair = (nb.w / safe[nb.pair_sample]) * ds[nb.pair_sample]
    want_params = not model.freeze_geometry
    g_head, dh = mlp_backward(SDF_HEAD_SPEC, model.store, "sdf_head", tape.head, ds_pair[:, None], want_params)
    g_glp, dgin = mlp_backward(GEO_LOCAL_SPEC, model.store, "geo_local", tape.glp, dh, want_params)
    _accumulate(grads, g_head)
    _accumulate(grads, g_glp)
    dgeo = scatter_sum(dgin[:, :GEO_LATENT_DIM], nb.pair_point, model.num_points)
    _accumulate(grads, {f"{model.latent_prefix}/geo_feat": dgeo})
    return grads


@dataclass
class RadianceTape:
    nb: NeighborBatch
    sample_sel: Array  # [S] bool: samples where radiance was decoded
    pair_sel: Array  # [P] bool
    compact: Array  # [S] -> compact row or -1
    alp: MlpTape
    head: MlpTape
    w_sel: Array
    wsum_sel: Array


def eval_radiance_batch(
    model: FieldModel,
    nb: NeighborBatch,
    view_dirs: Array,
    sample_sel: Array | None = None,
    with_tape: bool = True,
) -> tuple[Array, RadianceTape | None]:
    """View-dependent radiance at selected samples; everything else (and any
    sample without neighbors) gets the background color."""
    s = nb.n_samples
    sel = nb.has_neighbors.copy() if sample_sel is None else (sample_sel & nb.has_neighbors)
    rgb = np.broadcast_to(np.asarray(model.cfg.background, dtype=np.float64), (s, 3)).copy()
    n_sel = int(sel.sum())
    if n_sel == 0:
        return rgb, None
    compact = np.full(s, -1, dtype=np.int64)
    compact[sel] = np.arange(n_sel)
    pair_sel = sel[nb.pair_sample]
    pts = nb.pair_point[pair_sel]
    ain = np.concatenate(
        [model.app_feat[pts], positional_encoding(nb.rel[pair_sel], model.cfg.pe_freqs)], axis=1
    )
    f_pair, alp_tape = mlp_forward(APP_LOCAL_SPEC, model.store, "app_local", ain)
    cq = compact[nb.pair_sample[pair_sel]]
    w_sel = nb.w[pair_sel]
    f_agg = _segment_sum(w_sel[:, None] * f_pair, cq, n_sel)
    wsum_sel = nb.wsum[sel]
    f_agg /= wsum_sel[:, None]
    rin = np.concatenate([f_agg, np.atleast_2d(view_dirs)[sel]], axis=1)
    rgb_sel, head_tape = mlp_forward(RADIANCE_HEAD_SPEC, model.store, "radiance_head", rin)
    rgb[sel] = rgb_sel
    tape = (
        RadianceTape(nb, sel, pair_sel, compact, alp_tape, head_tape, w_sel, wsum_sel)
        if with_tape
        else None
    )
    return rgb, tape


def radiance_backward(
    model: FieldModel, tape: RadianceTape | None, d_rgb: Array, sum_into: dict[str, Array] | None = None
) -> dict[str, Array]:
    grads = sum_into if sum_into is not None else {}
    if tape is None:
        return grads
    nb = tape.nb
    g_head, drin = mlp_backward(
        RADIANCE_HEAD_SPEC, model.store, "radiance_head", tape.head, np.atleast_2d(d_rgb)[tape.sample_sel]
    )
    d_fagg = drin[:, :APP_FEATURE_DIM] / tape.wsum_sel[:, None]
    cq = tape.compact[nb.pair_sample[tape.pair_sel]]
    df_pair = tape.w_sel[:, None] * d_fagg[cq]
    g_alp, dain = mlp_backward(APP_LOCAL_SPEC, model.store, "app_local", tape.alp, df_pair)
    _accumulate(grads, g_head)
    _accumulate(grads, g_alp)
    dapp = scatter_sum(dain[:, :APP_LATENT_DIM], nb.pair_point[tape.pair_sel], model.num_points)
    _accumulate(grads, {f"{model.latent_prefix}/app_feat": dapp})
    return grads


def _accumulate(dst: dict[str, Array], src: dict[str, Array]) -> None:
    for k, v in src.items():
        if k in dst:
            dst[k] = dst[k] + v
        else:
            dst[k] = v


# -- public single-point ops -------------------------------------------------


def eval_sdf(model: FieldModel, grid: VoxelGrid, x: Array) -> float:
    nb = gather_neighbors(model, grid, np.asarray(x, dtype=np.float64)[None, :])
    s, _ = eval_sdf_batch(model, nb, with_tape=False)
    return float(s[0])


def eval_radiance(model: FieldModel, grid: VoxelGrid, x: Array, d: Array) -> Array:
    d = np.asarray(d, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("view direction must be unit length")
    nb = gather_neighbors(model, grid, np.asarray(x, dtype=np.float64)[None, :])
    rgb, _ = eval_radiance_batch(model, nb, d[None, :], with_tape=False)
    return rgb[0]


# -- spatial gradients via central differences -------------------------------


@dataclass
class SpatialGradientTape:
    sdf_tape: SdfTape
    n: int
    eps: float


def sdf_spatial_gradient(
    model: FieldModel, grid: VoxelGrid, x: Array, eps: float | None = None, with_tape: bool = False
) -> tuple[Array, SpatialGradientTape | None]:
    """Central-difference gradient of the interpolated SDF.  The six shifted
    evaluations keep their tape so the Eikonal objective can backpropagate
    through them without second-order machinery."""
    eps = model.cfg.grad_eps if eps is None else eps
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = len(x)
    shifts = np.zeros((6, 1, 3))
    for j in range(3):
        shifts[2 * j, 0, j] = eps
        shifts[2 * j + 1, 0, j] = -eps
    batch = (x[None, :, :] + shifts).reshape(6 * n, 3)
    nb = gather_neighbors(model, grid, batch)
    s, tape = eval_sdf_batch(model, nb, with_tape=with_tape)
    s = s.reshape(6, n)
    g = np.stack([(s[0] - s[1]), (s[2] - s[3]), (s[4] - s[5])], axis=1) / (2.0 * eps)
    return g, (SpatialGradientTape(tape, n, eps) if with_tape else None)


def spatial_gradient_backward(
    model: FieldModel, tape: SpatialGradientTape, d_grad: Array, sum_into: dict[str, Array] | None = None
) -> dict[str, Array]:
    """Chain gradients w.r.t. the finite-difference gradient back into the
    six shifted SDF evaluations."""
    n, eps = tape.n, tape.eps
    d_s = np.empty((6, n))
    for j in range(3):
        d_s[2 * j] = d_grad[:, j] / (2.0 * eps)
        d_s[2 * j + 1] = -d_grad[:, j] / (2.0 * eps)
    return sdf_backward(model, tape.sdf_tape, d_s.reshape(6 * n), sum_into)
