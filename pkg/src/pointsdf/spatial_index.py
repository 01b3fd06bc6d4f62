"""Voxel-grid accelerated K-neighbor queries over neural points.

The grid hashes points into cells of size voxel_size * voxel_scale over a
fixed axis-aligned range.  Queries gather candidates from the kernel-size
window of cells around the query's cell, keep those within an optional
radius, and return the K nearest ordered by (distance, point index) so
reruns are bit-exact.  Per-voxel capacity is bounded; later insertions into
a full voxel are dropped deterministically.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from pointsdf import _kernels

Array = np.ndarray


class VoxelGridError(ValueError):
    pass


@dataclass(frozen=True)
class VoxelGridConfig:
    voxel_size: tuple[float, float, float] = (0.025, 0.025, 0.025)
    voxel_scale: tuple[float, float, float] = (2.0, 2.0, 2.0)
    kernel_size: tuple[int, int, int] = (3, 3, 3)
    max_points_per_voxel: int = 26
    max_occupied_voxels: int = 20000
    ranges: tuple[float, float, float, float, float, float] = (-1.0, -1.0, -1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if any(v <= 0 for v in self.voxel_size) or any(s <= 0 for s in self.voxel_scale):
            raise VoxelGridError("voxel_size and voxel_scale must be positive")
        if any(k % 2 != 1 or k < 1 for k in self.kernel_size):
            raise VoxelGridError("kernel_size entries must be odd")
        if self.max_points_per_voxel < 1:
            raise VoxelGridError("max_points_per_voxel must be >= 1")

    @property
    def origin(self) -> Array:
        return np.asarray(self.ranges[:3], dtype=np.float64)

    @property
    def upper(self) -> Array:
        return np.asarray(self.ranges[3:], dtype=np.float64)

    @property
    def effective_voxel(self) -> Array:
        return np.asarray(self.voxel_size) * np.asarray(self.voxel_scale)

    @property
    def dims(self) -> Array:
        span = self.upper - self.origin
        return np.maximum(np.ceil(span / self.effective_voxel - 1e-12), 1).astype(np.int64)


class VoxelGrid:
    """Immutable after build; queries are read-only and safe to parallelize."""

    def __init__(self, points: Array, cfg: VoxelGridConfig, pt_sorted: Array, cell_keys: Array, cell_starts: Array):
        self.points = points
        self.cfg = cfg
        self._pt_sorted = pt_sorted
        self._cell_keys = cell_keys
        self._cell_starts = cell_starts

    @classmethod
    def build(cls, points: Array, cfg: VoxelGridConfig) -> "VoxelGrid":
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        origin, upper, eff, dims = cfg.origin, cfg.upper, cfg.effective_voxel, cfg.dims

        in_range = np.all((pts >= origin) & (pts <= upper), axis=1)
        if not in_range.all():
            warnings.warn(f"{int((~in_range).sum())} points outside grid ranges were excluded", stacklevel=2)
        idx = np.where(in_range)[0].astype(np.int64)
        cell = np.floor((pts[idx] - origin) / eff).astype(np.int64)
        np.clip(cell, 0, dims - 1, out=cell)
        keys = (cell[:, 0] * dims[1] + cell[:, 1]) * dims[2] + cell[:, 2]

        order = np.argsort(keys, kind="stable")  # stable: keeps insertion order per voxel
        keys_sorted = keys[order]
        idx_sorted = idx[order]
        uniq, starts_all, counts_all = np.unique(keys_sorted, return_index=True, return_counts=True)
        if len(uniq) > cfg.max_occupied_voxels:
            raise VoxelGridError(
                f"{len(uniq)} occupied voxels exceeds max_occupied_voxels={cfg.max_occupied_voxels}"
            )
        # drop overflow beyond per-voxel capacity, keeping earliest insertions
        rank = np.arange(len(keys_sorted)) - np.repeat(starts_all, counts_all)
        keep = rank < cfg.max_points_per_voxel
        idx_kept = idx_sorted[keep]
        keys_kept = keys_sorted[keep]
        uniq2, counts2 = np.unique(keys_kept, return_counts=True)
        cell_starts = np.zeros(len(uniq2) + 1, dtype=np.int64)
        np.cumsum(counts2, out=cell_starts[1:])
        return cls(pts, cfg, np.ascontiguousarray(idx_kept), np.ascontiguousarray(uniq2), cell_starts)

    @property
    def occupied_voxels(self) -> int:
        return len(self._cell_keys)

    @property
    def stored_count(self) -> int:
        return len(self._pt_sorted)

    def stored_indices(self) -> Array:
        return self._pt_sorted.copy()

    def query_batch(self, queries: Array, k: int, radius: float | None = None) -> Array:
        """Neighbor indices [Q, k], -1 padded, sorted by (distance, index)."""
        if k < 1:
            raise VoxelGridError("k must be >= 1")
        q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
        r2 = np.inf if radius is None else float(radius) ** 2
        cfg = self.cfg
        return _kernels.voxel_query(
            self.points,
            self._pt_sorted,
            self._cell_keys,
            self._cell_starts,
            cfg.origin,
            cfg.effective_voxel,
            cfg.dims,
            (np.asarray(cfg.kernel_size, dtype=np.int64) // 2),
            q,
            int(k),
            r2,
        )

    def query(self, x: Array, k: int, radius: float | None = None) -> list[int]:
        """Single-point query: up to k neighbor indices, nearest first."""
        res = self.query_batch(np.asarray(x, dtype=np.float64)[None, :], k, radius)[0]
        return [int(i) for i in res if i >= 0]


def brute_force_query(
    points: Array, cfg: VoxelGridConfig, stored: Array, x: Array, k: int, radius: float | None = None
) -> list[int]:
    """Reference oracle: scan stored points, restrict to the kernel window and
    radius, sort by (distance, index), truncate to k."""
    origin, eff, dims = cfg.origin, cfg.effective_voxel, cfg.dims
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < origin) or np.any(x > cfg.upper):
        return []
    cx = np.minimum(np.floor((x - origin) / eff).astype(np.int64), dims - 1)
    half = np.asarray(cfg.kernel_size, dtype=np.int64) // 2
    out = []
    for pi in stored:
        cp = np.minimum(np.floor((points[pi] - origin) / eff).astype(np.int64), dims - 1)
        if np.any(np.abs(cp - cx) > half):
            continue
        d2 = float(np.sum((points[pi] - x) ** 2))
        if radius is not None and d2 > radius**2:
            continue
        out.append((d2, int(pi)))
    out.sort()
    return [pi for _, pi in out[:k]]
