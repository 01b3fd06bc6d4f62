# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: voxel-window KNN, winding numbers, mesh distances,
ray-triangle intersection.  Mirrors `_backend_numpy` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, atan2, fabs, sqrt

cnp.import_array()

NAME = "native"


def voxel_query(
    cnp.float64_t[:, ::1] points,
    cnp.int64_t[::1] pt_sorted,
    cnp.int64_t[::1] cell_keys,
    cnp.int64_t[::1] cell_starts,
    cnp.float64_t[::1] origin,
    cnp.float64_t[::1] eff_size,
    cnp.int64_t[::1] dims,
    cnp.int64_t[::1] kernel_half,
    cnp.float64_t[:, ::1] queries,
    int k,
    double radius_sq,
):
    cdef Py_ssize_t nq = queries.shape[0]
    out_arr = np.full((nq, k), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    if nq == 0 or pt_sorted.shape[0] == 0:
        return out_arr

    cdef double best_d[64]
    cdef cnp.int64_t best_i[64]
    if k > 64:
        raise ValueError("voxel_query supports k <= 64")

    cdef Py_ssize_t qi, j, m, pos, s, e, n_found
    cdef cnp.int64_t cx, cy, cz, ox, oy, oz, key, pidx
    cdef double qx, qy, qz, dx, dy, dz, d2
    cdef cnp.int64_t nkeys = cell_keys.shape[0]

    for qi in range(nq):
        qx = queries[qi, 0]
        qy = queries[qi, 1]
        qz = queries[qi, 2]
        if (qx < origin[0] or qy < origin[1] or qz < origin[2]
                or qx > origin[0] + eff_size[0] * dims[0]
                or qy > origin[1] + eff_size[1] * dims[1]
                or qz > origin[2] + eff_size[2] * dims[2]):
            continue
        cx = <cnp.int64_t>((qx - origin[0]) / eff_size[0])
        cy = <cnp.int64_t>((qy - origin[1]) / eff_size[1])
        cz = <cnp.int64_t>((qz - origin[2]) / eff_size[2])
        if cx >= dims[0]:
            cx = dims[0] - 1
        if cy >= dims[1]:
            cy = dims[1] - 1
        if cz >= dims[2]:
            cz = dims[2] - 1
        n_found = 0
        for ox in range(cx - kernel_half[0], cx + kernel_half[0] + 1):
            if ox < 0 or ox >= dims[0]:
                continue
            for oy in range(cy - kernel_half[1], cy + kernel_half[1] + 1):
                if oy < 0 or oy >= dims[1]:
                    continue
                for oz in range(cz - kernel_half[2], cz + kernel_half[2] + 1):
                    if oz < 0 or oz >= dims[2]:
                        continue
                    key = (ox * dims[1] + oy) * dims[2] + oz
                    pos = _bsearch(cell_keys, nkeys, key)
                    if pos < 0:
                        continue
                    s = cell_starts[pos]
                    e = cell_starts[pos + 1]
                    for j in range(s, e):
                        pidx = pt_sorted[j]
                        dx = qx - points[pidx, 0]
                        dy = qy - points[pidx, 1]
                        dz = qz - points[pidx, 2]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 > radius_sq:
                            continue
                        # insertion into the running top-k, ties by index
                        if n_found < k:
                            m = n_found
                            n_found += 1
                        elif d2 < best_d[k - 1] or (d2 == best_d[k - 1] and pidx < best_i[k - 1]):
                            m = k - 1
                        else:
                            continue
                        while m > 0 and (best_d[m - 1] > d2 or (best_d[m - 1] == d2 and best_i[m - 1] > pidx)):
                            best_d[m] = best_d[m - 1]
                            best_i[m] = best_i[m - 1]
                            m -= 1
                        best_d[m] = d2
                        best_i[m] = pidx
        for m in range(n_found):
            out[qi, m] = best_i[m]
    return out_arr


cdef inline Py_ssize_t _bsearch(cnp.int64_t[::1] keys, Py_ssize_t n, cnp.int64_t key) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < n and keys[lo] == key:
        return lo
    return -1


def winding_number(
    cnp.float64_t[:, ::1] vertices,
    cnp.int64_t[:, ::1] faces,
    cnp.float64_t[:, ::1] queries,
):
    cdef Py_ssize_t nq = queries.shape[0], nf = faces.shape[0]
    out_arr = np.empty(nq, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef Py_ssize_t qi, f
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz
    cdef double la, lb, lc, det, denom, total
    cdef double qx, qy, qz
    for qi in range(nq):
        qx = queries[qi, 0]
        qy = queries[qi, 1]
        qz = queries[qi, 2]
        total = 0.0
        for f in range(nf):
            ax = vertices[faces[f, 0], 0] - qx
            ay = vertices[faces[f, 0], 1] - qy
            az = vertices[faces[f, 0], 2] - qz
            bx = vertices[faces[f, 1], 0] - qx
            by = vertices[faces[f, 1], 1] - qy
            bz = vertices[faces[f, 1], 2] - qz
            cx = vertices[faces[f, 2], 0] - qx
            cy = vertices[faces[f, 2], 1] - qy
            cz = vertices[faces[f, 2], 2] - qz
            la = sqrt(ax * ax + ay * ay + az * az)
            lb = sqrt(bx * bx + by * by + bz * bz)
            lc = sqrt(cx * cx + cy * cy + cz * cz)
            det = ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz) + az * (bx * cy - by * cx)
            denom = la * lb * lc
            denom += (ax * bx + ay * by + az * bz) * lc
            denom += (bx * cx + by * cy + bz * cz) * la
            denom += (cx * ax + cy * ay + cz * az) * lb
            total += 2.0 * atan2(det, denom)
        out[qi] = total / (4.0 * 3.14159265358979323846)
    return out_arr


def mesh_distance(
    cnp.float64_t[:, ::1] vertices,
    cnp.int64_t[:, ::1] faces,
    cnp.float64_t[:, ::1] queries,
):
    cdef Py_ssize_t nq = queries.shape[0], nf = faces.shape[0]
    out_arr = np.empty(nq, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef Py_ssize_t qi, f
    cdef double best, d2
    for qi in range(nq):
        best = INFINITY
        for f in range(nf):
            d2 = _pt_tri_d2(vertices, faces, f, queries[qi, 0], queries[qi, 1], queries[qi, 2])
            if d2 < best:
                best = d2
        out[qi] = sqrt(best)
    return out_arr


cdef inline double _pt_tri_d2(
    cnp.float64_t[:, ::1] v,
    cnp.int64_t[:, ::1] fc,
    Py_ssize_t f,
    double px, double py, double pz,
) noexcept nogil:
    cdef double ax = v[fc[f, 0], 0], ay = v[fc[f, 0], 1], az = v[fc[f, 0], 2]
    cdef double bx = v[fc[f, 1], 0], by = v[fc[f, 1], 1], bz = v[fc[f, 1], 2]
    cdef double cx = v[fc[f, 2], 0], cy = v[fc[f, 2], 1], cz = v[fc[f, 2], 2]
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = abx * apx + aby * apy + abz * apz
    cdef double d2 = acx * apx + acy * apy + acz * apz
    cdef double qx, qy, qz, t, v_, w_, den
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = ax, ay, az
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    cdef double bpx = px - bx, bpy = py - by, bpz = pz - bz
    cdef double d3 = abx * bpx + aby * bpy + abz * bpz
    cdef double d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return (px - bx) ** 2 + (py - by) ** 2 + (pz - bz) ** 2
    cdef double vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        qx, qy, qz = ax + t * abx, ay + t * aby, az + t * abz
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    cdef double cpx = px - cx, cpy = py - cy, cpz = pz - cz
    cdef double d5 = abx * cpx + aby * cpy + abz * cpz
    cdef double d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return (px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2
    cdef double vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        qx, qy, qz = ax + t * acx, ay + t * acy, az + t * acz
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    cdef double va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx, qy, qz = bx + t * (cx - bx), by + t * (cy - by), bz + t * (cz - bz)
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    den = 1.0 / (va + vb + vc)
    v_ = vb * den
    w_ = vc * den
    qx = ax + abx * v_ + acx * w_
    qy = ay + aby * v_ + acy * w_
    qz = az + abz * v_ + acz * w_
    return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2


def ray_mesh(
    cnp.float64_t[:, ::1] vertices,
    cnp.int64_t[:, ::1] faces,
    cnp.float64_t[:, ::1] origins,
    cnp.float64_t[:, ::1] dirs,
    double t_min=1e-9,
):
    cdef Py_ssize_t nr = origins.shape[0], nf = faces.shape[0]
    t_arr = np.full(nr, np.inf)
    tri_arr = np.full(nr, -1, dtype=np.int64)
    cdef cnp.float64_t[::1] t_out = t_arr
    cdef cnp.int64_t[::1] tri_out = tri_arr
    cdef Py_ssize_t ri, f
    cdef double ox, oy, oz, dx, dy, dz
    cdef double ax, ay, az, e1x, e1y, e1z, e2x, e2y, e2z
    cdef double pvx, pvy, pvz, det, inv, tvx, tvy, tvz, u, qvx, qvy, qvz, vv, t, best
    cdef Py_ssize_t best_f
    for ri in range(nr):
        ox, oy, oz = origins[ri, 0], origins[ri, 1], origins[ri, 2]
        dx, dy, dz = dirs[ri, 0], dirs[ri, 1], dirs[ri, 2]
        best = INFINITY
        best_f = -1
        for f in range(nf):
            ax = vertices[faces[f, 0], 0]
            ay = vertices[faces[f, 0], 1]
            az = vertices[faces[f, 0], 2]
            e1x = vertices[faces[f, 1], 0] - ax
            e1y = vertices[faces[f, 1], 1] - ay
            e1z = vertices[faces[f, 1], 2] - az
            e2x = vertices[faces[f, 2], 0] - ax
            e2y = vertices[faces[f, 2], 1] - ay
            e2z = vertices[faces[f, 2], 2] - az
            pvx = dy * e2z - dz * e2y
            pvy = dz * e2x - dx * e2z
            pvz = dx * e2y - dy * e2x
            det = e1x * pvx + e1y * pvy + e1z * pvz
            if fabs(det) <= 1e-14:
                continue
            inv = 1.0 / det
            tvx, tvy, tvz = ox - ax, oy - ay, oz - az
            u = (tvx * pvx + tvy * pvy + tvz * pvz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qvx = tvy * e1z - tvz * e1y
            qvy = tvz * e1x - tvx * e1z
            qvz = tvx * e1y - tvy * e1x
            vv = (dx * qvx + dy * qvy + dz * qvz) * inv
            if vv < 0.0 or u + vv > 1.0:
                continue
            t = (e2x * qvx + e2y * qvy + e2z * qvz) * inv
            if t > t_min and t < best:
                best = t
                best_f = f
        t_out[ri] = best
        tri_out[ri] = best_f
    return t_arr, tri_arr
