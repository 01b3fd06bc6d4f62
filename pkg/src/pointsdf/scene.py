"""Synthetic scenes and the ground-truth renderer.

Produces the reference color/depth images that stand in for captured input
views: sphere tracing for analytic shapes, ray-triangle intersection for
meshes.  Albedo is returned directly (no shading); a procedural checkerboard
is available so photometric losses see non-constant gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pointsdf.cameras import Camera
from pointsdf.mesh import MeshShape, TriMesh

Array = np.ndarray

DEPTH_MISS = np.inf


@dataclass(frozen=True)
class ConstantAlbedo:
    color: tuple[float, float, float] = (0.8, 0.8, 0.8)

    def __call__(self, points: Array) -> Array:
        return np.broadcast_to(np.asarray(self.color), (len(points), 3)).copy()


@dataclass(frozen=True)
class CheckerAlbedo:
    """World-space 3D checkerboard: parity of the cell index sum."""

    color_a: tuple[float, float, float] = (0.9, 0.9, 0.9)
    color_b: tuple[float, float, float] = (0.15, 0.15, 0.15)
    cell: float = 0.25
    phase: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __call__(self, points: Array) -> Array:
        idx = np.floor((points - np.asarray(self.phase)) / self.cell).astype(np.int64)
        parity = (idx.sum(axis=1) % 2) == 0
        return np.where(parity[:, None], np.asarray(self.color_a), np.asarray(self.color_b))


@dataclass(frozen=True)
class VertexColorAlbedo:
    """Nearest-vertex color lookup for mesh objects."""

    mesh: TriMesh

    def __call__(self, points: Array) -> Array:
        if self.mesh.vertex_colors is None:
            raise ValueError("mesh has no vertex colors")
        d = points[:, None, :] - self.mesh.vertices[None, :, :]
        nearest = np.argmin(np.einsum("pvk,pvk->pv", d, d), axis=1)
        return self.mesh.vertex_colors[nearest]


@dataclass(frozen=True)
class SceneObject:
    shape: object  # analytic shape or MeshShape
    albedo: object = field(default_factory=ConstantAlbedo)


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    render_bounds: tuple | None = None  # ((lo), (hi)); hits outside count as misses

    def sdf(self, x: Array) -> Array:
        return np.min(np.stack([o.shape.sdf(x) for o in self.objects], axis=0), axis=0)


def _aabb_span(origins: Array, dirs: Array, lo: Array, hi: Array) -> tuple[Array, Array]:
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    return np.maximum(tmin, 0.0), tmax


def _sphere_trace(
    shapes: list, origins: Array, dirs: Array, t_start: Array, t_stop: Array,
    tol: float = 1e-10, max_steps: int = 256,
) -> Array:
    """First-hit distance along each ray against min-union of analytic SDFs."""
    n = len(origins)
    t = t_start.copy()
    alive = t < t_stop
    hit_t = np.full(n, np.inf)
    for _ in range(max_steps):
        if not alive.any():
            break
        p = origins[alive] + t[alive, None] * dirs[alive]
        d = np.min(np.stack([s.sdf(p) for s in shapes], axis=0), axis=0)
        idx = np.where(alive)[0]
        done = d < tol
        hit_t[idx[done]] = t[idx[done]]
        t[idx] += np.maximum(d, 0.0)
        escaped = t[idx] > t_stop[idx]
        alive[idx[done]] = False
        alive[idx[escaped]] = False
    return hit_t


def render_ground_truth(scene: Scene, cam: Camera) -> tuple[Array, Array]:
    """Per-pixel first-hit albedo and ray depth; misses get the background
    color and an infinite-depth sentinel."""
    if not scene.objects:
        raise ValueError("scene is empty")
    origins, dirs = cam.all_rays()
    n = len(origins)
    if scene.render_bounds is not None:
        lo = np.asarray(scene.render_bounds[0], dtype=np.float64)
        hi = np.asarray(scene.render_bounds[1], dtype=np.float64)
        t_start, t_stop = _aabb_span(origins, dirs, lo, hi)
        t_stop = np.where(t_stop >= t_start, t_stop, -np.inf)
    else:
        t_start = np.zeros(n)
        t_stop = np.full(n, 1e3)

    analytic = [o for o in scene.objects if not isinstance(o.shape, MeshShape)]
    meshes = [o for o in scene.objects if isinstance(o.shape, MeshShape)]

    depth = np.full(n, np.inf)
    obj_of = np.full(n, -1, dtype=np.int64)
    if analytic:
        t_hit = _sphere_trace([o.shape for o in analytic], origins, dirs, t_start, t_stop)
        better = t_hit < depth
        depth[better] = t_hit[better]
        # resolve which analytic object was hit: smallest |sdf| at the hit point
        hits = np.where(np.isfinite(depth) & better)[0]
        if len(hits):
            p = origins[hits] + depth[hits, None] * dirs[hits]
            dists = np.abs(np.stack([o.shape.sdf(p) for o in analytic], axis=0))
            obj_of[hits] = np.argmin(dists, axis=0)
    for mi, obj in enumerate(meshes):
        t_hit, _tri = obj.shape.mesh.intersect_rays(origins, dirs)
        t_hit = np.where((t_hit >= t_start) & (t_hit <= t_stop), t_hit, np.inf)
        better = t_hit < depth
        depth[better] = t_hit[better]
        obj_of[better] = len(analytic) + mi

    ordered = analytic + meshes
    color = np.broadcast_to(np.asarray(scene.background), (n, 3)).copy()
    for oi, obj in enumerate(ordered):
        sel = obj_of == oi
        if sel.any():
            p = origins[sel] + depth[sel, None] * dirs[sel]
            color[sel] = obj.albedo(p)

    h, w = cam.height, cam.width
    return color.reshape(h, w, 3), depth.reshape(h, w)
