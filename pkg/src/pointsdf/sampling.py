"""Point sampling: farthest-point subsets, labeled query points for prior
training, position jitter, and the depth-unprojection seed points that stand
in for an upstream stereo point-cloud predictor."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from pointsdf import mesh as mesh_io
from pointsdf.cameras import Camera

Array = np.ndarray


@dataclass
class SeedPointSet:
    points: Array  # [N, 3]
    colors: Array | None = None  # [N, 3] in [0, 1]

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if not np.all(np.isfinite(self.points)):
            raise ValueError("seed points must be finite")

    def __len__(self) -> int:
        return len(self.points)

    def save_ply(self, path) -> None:
        m = mesh_io.TriMesh(self.points, np.zeros((0, 3), dtype=np.int64), self.colors)
        mesh_io.save_ply(path, m)

    @classmethod
    def load_ply(cls, path) -> "SeedPointSet":
        m = mesh_io.load_ply(path)
        return cls(m.vertices, m.vertex_colors)


@dataclass
class QuerySample:
    x: Array
    s: float


def farthest_point_sample(
    surface_samples: Array,
    spacing: float,
    seed: int | np.random.Generator = 0,
    max_points: int | None = None,
) -> tuple[Array, Array]:
    """Greedy max-min subset selection.

    Starts from a seed-chosen index and stops once the largest remaining
    min-distance drops below `spacing` (or `max_points` is reached), so the
    selected set has pairwise distances >= spacing.  Returns (points,
    selected indices).
    """
    pts = np.atleast_2d(np.asarray(surface_samples, dtype=np.float64))
    if len(pts) == 0:
        raise ValueError("surface_samples must be non-empty")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    start = int(rng.integers(len(pts)))
    selected = [start]
    dist = np.linalg.norm(pts - pts[start], axis=1)
    limit = max_points if max_points is not None else len(pts)
    while len(selected) < limit:
        nxt = int(np.argmax(dist))
        if dist[nxt] < spacing:
            break
        selected.append(nxt)
        np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1), out=dist)
    idx = np.array(selected, dtype=np.int64)
    return pts[idx], idx


def sample_query_points(
    shape,
    count: int,
    surface_variances: tuple[float, ...] = (0.05, 0.001),
    seed: int | np.random.Generator = 0,
    max_rounds: int = 200,
) -> tuple[Array, Array]:
    """Labeled query points around a shape's surface.

    Surface samples are displaced by zero-mean Gaussian offsets (the listed
    values are variances, split evenly across tiers) and labeled with the
    exact oracle distance.  The returned set is balanced so positive and
    negative labels differ by at most one; shapes without an interior skip
    balancing with a warning.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if any(v <= 0 for v in surface_variances):
        raise ValueError("variances must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    ntiers = len(surface_variances)
    tier_counts = [count // ntiers + (1 if i < count % ntiers else 0) for i in range(ntiers)]

    if not shape.has_interior:
        warnings.warn("shape has no interior; skipping positive/negative balancing", stacklevel=2)
        xs, ss = [], []
        for var, n in zip(surface_variances, tier_counts):
            base = shape.sample_surface(n, rng)
            x = base + rng.normal(0.0, np.sqrt(var), size=base.shape)
            xs.append(x)
            ss.append(shape.sdf(x))
        return np.concatenate(xs), np.concatenate(ss)

    xs, ss = [], []
    for ti, (var, n) in enumerate(zip(surface_variances, tier_counts)):
        # alternate which sign receives the odd remainder across tiers
        n_pos = n // 2 + (n % 2 if ti % 2 else 0)
        n_neg = n - n_pos
        got_pos: list[Array] = []
        got_neg: list[Array] = []
        have_pos = have_neg = 0
        for _ in range(max_rounds):
            need = max(n_pos - have_pos, 0) + max(n_neg - have_neg, 0)
            if need == 0:
                break
            m = 2 * need + 32
            base = shape.sample_surface(m, rng)
            x = base + rng.normal(0.0, np.sqrt(var), size=base.shape)
            s = shape.sdf(x)
            pos = x[s > 0.0]
            neg = x[s <= 0.0]
            got_pos.append(pos[: max(n_pos - have_pos, 0)])
            got_neg.append(neg[: max(n_neg - have_neg, 0)])
            have_pos += len(got_pos[-1])
            have_neg += len(got_neg[-1])
        if have_pos < n_pos or have_neg < n_neg:
            raise RuntimeError("could not balance query signs; shape may be degenerate")
        x = np.concatenate(got_pos + got_neg)
        xs.append(x)
        ss.append(shape.sdf(x))
    x = np.concatenate(xs)
    s = np.concatenate(ss)
    perm = rng.permutation(len(x))
    return x[perm], s[perm]


def jitter_points(points: Array, variance: float, seed: int | np.random.Generator = 0) -> Array:
    """Independent zero-mean Gaussian perturbation of each coordinate."""
    if variance < 0:
        raise ValueError("variance must be non-negative")
    pts = np.asarray(points, dtype=np.float64)
    if variance == 0.0:
        return pts.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return pts + rng.normal(0.0, np.sqrt(variance), size=pts.shape)


def unproject_depth(
    image: Array,
    depth: Array,
    cam: Camera,
    stride: int = 1,
    spacing: float | None = 0.025,
    seed: int | np.random.Generator = 0,
) -> SeedPointSet:
    """Lift pixels with finite depth to 3D along their rays, carrying pixel
    colors, then thin with farthest-point sampling to the target spacing."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if image.shape[:2] != depth.shape:
        raise ValueError("image and depth resolutions differ")
    vs, us = np.meshgrid(
        np.arange(0, cam.height, stride), np.arange(0, cam.width, stride), indexing="ij"
    )
    us, vs = us.ravel(), vs.ravel()
    d = depth[vs, us]
    finite = np.isfinite(d)
    if not finite.any():
        raise ValueError("depth map has no finite entries")
    us, vs, d = us[finite], vs[finite], d[finite]
    origins, dirs = cam.pixel_rays(us, vs)
    pts = origins + d[:, None] * dirs
    cols = image[vs, us]
    if spacing is not None:
        _, idx = farthest_point_sample(pts, spacing, seed)
        pts, cols = pts[idx], cols[idx]
    return SeedPointSet(pts, cols)


def seed_points_from_views(
    images: list[Array],
    depths: list[Array],
    cams: list[Camera],
    stride: int = 1,
    spacing: float = 0.025,
    seed: int | np.random.Generator = 0,
) -> SeedPointSet:
    """Concatenate raw unprojections from several views, then one FPS pass."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    parts = [
        unproject_depth(img, dep, cam, stride, spacing=None)
        for img, dep, cam in zip(images, depths, cams)
    ]
    pts = np.concatenate([p.points for p in parts])
    cols = np.concatenate([p.colors for p in parts])
    _, idx = farthest_point_sample(pts, spacing, rng)
    return SeedPointSet(pts[idx], cols[idx])
