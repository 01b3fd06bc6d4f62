"""Mesh extraction and quantitative evaluation: marching cubes over the
field, Chamfer distance, PSNR, and the latent-space PCA/clustering analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from pointsdf.field import FieldModel, eval_sdf_batch, gather_neighbors
from pointsdf.mesh import TriMesh
from pointsdf.spatial_index import VoxelGrid

Array = np.ndarray


@dataclass(frozen=True)
class ExtractionConfig:
    resolution: int = 128
    bounds: tuple[float, float, float, float, float, float] = (-1.0, -1.0, -1.0, 1.0, 1.0, 1.0)
    iso: float = 0.0
    min_component_faces: int = 0

    def __post_init__(self):
        if self.resolution < 8:
            raise ValueError("resolution must be >= 8")
        lo = np.asarray(self.bounds[:3])
        hi = np.asarray(self.bounds[3:])
        if np.any(hi <= lo):
            raise ValueError("bounds are degenerate")


def field_sdf_fn(model: FieldModel, grid: VoxelGrid, chunk: int = 65536):
    def fn(x: Array) -> Array:
        x = np.atleast_2d(x)
        out = np.empty(len(x))
        for lo in range(0, len(x), chunk):
            nb = gather_neighbors(model, grid, x[lo : lo + chunk])
            s, _ = eval_sdf_batch(model, nb, with_tape=False)
            out[lo : lo + chunk] = s
        return out

    return fn


def marching_cubes(sdf_fn, cfg: ExtractionConfig) -> TriMesh:
    """Triangulate the iso level set of a scalar field sampled on a dense
    grid.  Faces are oriented outward (toward positive values); an empty
    mesh is returned when the field never changes sign."""
    n = cfg.resolution
    lo = np.asarray(cfg.bounds[:3], dtype=np.float64)
    hi = np.asarray(cfg.bounds[3:], dtype=np.float64)
    axes = [np.linspace(lo[d], hi[d], n) for d in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    values = np.asarray(sdf_fn(pts), dtype=np.float64).reshape(n, n, n)
    if values.min() > cfg.iso or values.max() < cfg.iso:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    spacing = tuple((hi - lo) / (n - 1))
    verts, faces, _normals, _vals = measure.marching_cubes(
        values, level=cfg.iso, spacing=spacing, gradient_direction="ascent"
    )
    mesh = TriMesh(verts + lo, faces.astype(np.int64))
    if cfg.min_component_faces > 1:
        mesh = filter_small_components(mesh, cfg.min_component_faces)
    return mesh


def filter_small_components(mesh: TriMesh, min_faces: int) -> TriMesh:
    """Drop vertex-connected components with fewer faces than the cutoff."""
    parent = np.arange(len(mesh.vertices))

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for f in mesh.faces:
        a, b, c = (find(int(v)) for v in f)
        parent[b] = a
        parent[c] = find(int(a))
    comp_of_face = np.array([find(int(f[0])) for f in mesh.faces])
    roots, counts = np.unique(comp_of_face, return_counts=True)
    keep_roots = set(roots[counts >= min_faces])
    keep = np.array([c in keep_roots for c in comp_of_face])
    faces = mesh.faces[keep]
    used = np.unique(faces)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(mesh.vertices[used], remap[faces])


def chamfer_distance(a: Array, b: Array, brute_force_limit: int = 5000) -> float:
    """Symmetric mean nearest-neighbor distance:
    (mean_a min_b ||a-b|| + mean_b min_a ||a-b||) / 2."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be non-empty")
    if max(len(a), len(b)) <= brute_force_limit:
        d_ab = _brute_nn(a, b)
        d_ba = _brute_nn(b, a)
    else:
        d_ab = cKDTree(b).query(a)[0]
        d_ba = cKDTree(a).query(b)[0]
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def _brute_nn(a: Array, b: Array, chunk: int = 512) -> Array:
    out = np.empty(len(a))
    for lo in range(0, len(a), chunk):
        d = np.linalg.norm(a[lo : lo + chunk, None, :] - b[None, :, :], axis=2)
        out[lo : lo + chunk] = d.min(axis=1)
    return out


def psnr(image: Array, reference: Array, cap: float = 99.0) -> float:
    """10*log10(1/MSE) for values in [0, 1]; identical inputs hit the cap."""
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(10.0 * np.log10(1.0 / mse), cap)


# -- latent analysis -----------------------------------------------------------


def pca_project(latents: Array, n_components: int) -> tuple[Array, Array, Array]:
    """Center and project onto the top principal directions.

    Component signs follow a fixed convention (the largest-magnitude loading
    is positive) so projections are deterministic.  Returns (projection,
    components [n_components, D], explained variance ratios).
    """
    x = np.asarray(latents, dtype=np.float64)
    if len(x) < n_components:
        raise ValueError("need at least n_components points")
    centered = x - x.mean(axis=0)
    _u, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:n_components]
    for i in range(len(comps)):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    proj = centered @ comps.T
    var = s**2
    ratios = var[:n_components] / var.sum() if var.sum() > 0 else np.zeros(n_components)
    return proj, comps, ratios


def kmeans(x: Array, k: int, seed: int | np.random.Generator = 0, n_iter: int = 100) -> tuple[Array, Array]:
    """Lloyd's algorithm with kmeans++ seeding; deterministic under the seed.
    Returns (labels, centers)."""
    x = np.asarray(x, dtype=np.float64)
    if k > len(x):
        raise ValueError("k exceeds the number of points")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = centers[0]
            break
        probs = d2 / total
        centers[i] = x[rng.choice(len(x), p=probs)]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    labels = np.zeros(len(x), dtype=np.int64)
    for _ in range(n_iter):
        dists = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=2)
        new_labels = np.argmin(dists, axis=1)
        if np.array_equal(new_labels, labels) and _ > 0:
            break
        labels = new_labels
        for c in range(k):
            members = x[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return labels, centers


def adjusted_rand_index(labels_a: Array, labels_b: Array) -> float:
    """Chance-corrected agreement between two label assignments."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label arrays differ in length")
    n = len(a)
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((len(ua), len(ub)), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)

    def comb2(v):
        return v * (v - 1) / 2.0

    sum_ij = comb2(table.astype(np.float64)).sum()
    sum_a = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_b = comb2(table.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(n))
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0 if sum_ij == expected else 0.0
    return float((sum_ij - expected) / (max_index - expected))


def latent_analysis(
    latents: Array,
    positions: Array,
    n_components: int = 3,
    k_clusters: int = 6,
    seed: int = 0,
) -> dict:
    """PCA projection plus k-means labels of per-point latent codes, packaged
    with colors for export as a colored point cloud."""
    proj, comps, ratios = pca_project(latents, n_components)
    labels, centers = kmeans(latents, k_clusters, seed)
    span = proj.max(axis=0) - proj.min(axis=0)
    span[span == 0] = 1.0
    pca_colors = (proj - proj.min(axis=0)) / span
    palette = _cluster_palette(k_clusters)
    return {
        "projection": proj,
        "components": comps,
        "explained": ratios,
        "labels": labels,
        "centers": centers,
        "pca_colors": pca_colors[:, : min(3, n_components)],
        "cluster_colors": palette[labels],
        "positions": np.asarray(positions, dtype=np.float64),
    }


def _cluster_palette(k: int) -> Array:
    hues = np.linspace(0.0, 1.0, k, endpoint=False)
    cols = np.empty((k, 3))
    for i, h in enumerate(hues):
        x = 1.0 - abs((h * 6.0) % 2.0 - 1.0)
        sector = int(h * 6.0) % 6
        rgb = [(1, x, 0), (x, 1, 0), (0, 1, x), (0, x, 1), (x, 0, 1), (1, 0, x)][sector]
        cols[i] = rgb
    return cols
