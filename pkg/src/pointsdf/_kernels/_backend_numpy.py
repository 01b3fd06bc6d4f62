"""Numpy implementations of the hot kernels.

Selected at import time when the compiled extension is unavailable (or when
POINTSDF_FORCE_FALLBACK=1).  Must match `_native` results exactly: same
arithmetic per candidate, same (distance, index) ordering.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray

NAME = "numpy"


def _exclusive_cumsum(a: Array) -> Array:
    out = np.zeros(len(a) + 1, dtype=np.int64)
    np.cumsum(a, out=out[1:])
    return out


def voxel_query(
    points: Array,
    pt_sorted: Array,
    cell_keys: Array,
    cell_starts: Array,
    origin: Array,
    eff_size: Array,
    dims: Array,
    kernel_half: Array,
    queries: Array,
    k: int,
    radius_sq: float,
) -> Array:
    """K nearest stored points inside the kernel window around each query.

    Returns an [Q, k] int64 array of point indices sorted by (distance,
    index), padded with -1.  Queries outside the grid ranges get no results.
    """
    q = np.asarray(queries, dtype=np.float64)
    nq = len(q)
    out = np.full((nq, k), -1, dtype=np.int64)
    if nq == 0 or len(pt_sorted) == 0:
        return out

    upper = origin + eff_size * dims
    inb = np.all((q >= origin) & (q <= upper), axis=1)
    cell = np.floor((q - origin) / eff_size).astype(np.int64)
    np.clip(cell, 0, dims - 1, out=cell)  # boundary points at the max range

    offs = np.stack(
        np.meshgrid(
            *[np.arange(-h, h + 1, dtype=np.int64) for h in kernel_half],
            indexing="ij",
        ),
        axis=-1,
    ).reshape(-1, 3)
    nw = len(offs)

    win = cell[:, None, :] + offs[None, :, :]  # [Q, W, 3]
    ok = inb[:, None] & np.all((win >= 0) & (win < dims), axis=2)
    keys = (win[..., 0] * dims[1] + win[..., 1]) * dims[2] + win[..., 2]
    pos = np.searchsorted(cell_keys, keys)
    pos = np.minimum(pos, len(cell_keys) - 1)  # clamp; 'found' rejects non-matches
    found = ok & (cell_keys[pos] == keys)

    seg_start = np.where(found, cell_starts[pos], 0).ravel()
    seg_count = np.where(found, cell_starts[pos + 1] - cell_starts[pos], 0).ravel()
    total = int(seg_count.sum())
    if total == 0:
        return out

    base = _exclusive_cumsum(seg_count)
    within = np.arange(total, dtype=np.int64) - np.repeat(base[:-1], seg_count)
    cand_pt = pt_sorted[np.repeat(seg_start, seg_count) + within]
    cand_q = np.repeat(np.repeat(np.arange(nq, dtype=np.int64), nw), seg_count)

    diff = q[cand_q] - points[cand_pt]
    d2 = diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2
    keep = d2 <= radius_sq
    cand_q, cand_pt, d2 = cand_q[keep], cand_pt[keep], d2[keep]
    if len(cand_q) == 0:
        return out

    order = np.lexsort((cand_pt, d2, cand_q))
    sq = cand_q[order]
    group_start = np.searchsorted(sq, np.arange(nq))
    rank = np.arange(len(order), dtype=np.int64) - group_start[sq]
    sel = rank < k
    out[sq[sel], rank[sel]] = cand_pt[order][sel]
    return out


def winding_number(vertices: Array, faces: Array, queries: Array, chunk: int = 64) -> Array:
    """Generalized winding number per query (1 inside a watertight mesh)."""
    v0 = vertices[faces[:, 0]]
    v1 = vertices[faces[:, 1]]
    v2 = vertices[faces[:, 2]]
    out = np.empty(len(queries), dtype=np.float64)
    for lo in range(0, len(queries), chunk):
        qs = queries[lo : lo + chunk][:, None, :]
        a = v0[None] - qs
        b = v1[None] - qs
        c = v2[None] - qs
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        det = np.einsum("qfi,qfi->qf", a, np.cross(b, c))
        denom = la * lb * lc + np.einsum("qfi,qfi->qf", a, b) * lc
        denom += np.einsum("qfi,qfi->qf", b, c) * la + np.einsum("qfi,qfi->qf", c, a) * lb
        omega = 2.0 * np.arctan2(det, denom)
        out[lo : lo + chunk] = omega.sum(axis=1) / (4.0 * np.pi)
    return out


def mesh_distance(vertices: Array, faces: Array, queries: Array, chunk: int = 64) -> Array:
    """Unsigned distance from each query to the closest triangle."""
    a = vertices[faces[:, 0]][None]
    b = vertices[faces[:, 1]][None]
    c = vertices[faces[:, 2]][None]
    out = np.empty(len(queries), dtype=np.float64)
    for lo in range(0, len(queries), chunk):
        p = queries[lo : lo + chunk][:, None, :]
        out[lo : lo + chunk] = np.sqrt(_point_tri_dist_sq(p, a, b, c).min(axis=1))
    return out


def _point_tri_dist_sq(p: Array, a: Array, b: Array, c: Array) -> Array:
    # closest point on triangle, region-by-region (Ericson, RTCD ch. 5)
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = np.where(d1 != d3, d1 / (d1 - d3), 0.0)
        t_ac = np.where(d2 != d6, d2 / (d2 - d6), 0.0)
        den_bc = (d4 - d3) + (d5 - d6)
        t_bc = np.where(den_bc != 0.0, (d4 - d3) / den_bc, 0.0)
        s = va + vb + vc
        v_in = np.where(s != 0.0, vb / s, 0.0)
        w_in = np.where(s != 0.0, vc / s, 0.0)

    close = a + v_in[..., None] * ab + w_in[..., None] * ac  # interior default
    close = np.where(((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0))[..., None], b + t_bc[..., None] * (c - b), close)
    close = np.where(((vb <= 0) & (d2 >= 0) & (d6 <= 0))[..., None], a + t_ac[..., None] * ac, close)
    close = np.where(((vc <= 0) & (d1 >= 0) & (d3 <= 0))[..., None], a + t_ab[..., None] * ab, close)
    close = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, close)
    close = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, close)
    close = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, close)
    diff = p - close
    return np.einsum("...i,...i->...", diff, diff)


def ray_mesh(
    vertices: Array,
    faces: Array,
    origins: Array,
    dirs: Array,
    t_min: float = 1e-9,
    chunk: int = 256,
) -> tuple[Array, Array]:
    """First ray-triangle hit per ray: (t, triangle index); misses get inf/-1."""
    a = vertices[faces[:, 0]][None]
    e1 = (vertices[faces[:, 1]] - vertices[faces[:, 0]])[None]
    e2 = (vertices[faces[:, 2]] - vertices[faces[:, 0]])[None]
    t_out = np.full(len(origins), np.inf)
    tri_out = np.full(len(origins), -1, dtype=np.int64)
    for lo in range(0, len(origins), chunk):
        o = origins[lo : lo + chunk][:, None, :]
        d = dirs[lo : lo + chunk][:, None, :]
        pvec = np.cross(d, e2)
        det = np.einsum("rfi,rfi->rf", e1, pvec)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tvec = o - a
            u = np.einsum("rfi,rfi->rf", tvec, pvec) * inv
            qvec = np.cross(tvec, e1)
            v = np.einsum("rfi,rfi->rf", d, qvec) * inv
            t = np.einsum("rfi,rfi->rf", e2, qvec) * inv
        hit = (np.abs(det) > 1e-14) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > t_min)
        t = np.where(hit, t, np.inf)
        best = np.argmin(t, axis=1)
        rows = np.arange(len(t))
        t_out[lo : lo + chunk] = t[rows, best]
        tri_out[lo : lo + chunk] = np.where(np.isfinite(t[rows, best]), best, -1)
    return t_out, tri_out
