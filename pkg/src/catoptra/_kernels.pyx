# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``.

Signatures and semantics match the numpy versions; loops release the GIL so
callers can run several views on threads.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, floor, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef cnp.float64_t f8
ctypedef cnp.int64_t i8


cdef inline double _mt(const double* o, const double* d, const double* v0,
                       const double* e1, const double* e2) noexcept nogil:
    cdef double px, py, pz, det, inv, sx, sy, sz, u, qx, qy, qz, v, t
    cdef double eps = 1e-12
    px = d[1] * e2[2] - d[2] * e2[1]
    py = d[2] * e2[0] - d[0] * e2[2]
    pz = d[0] * e2[1] - d[1] * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if not fabs(det) > eps:
        return INFINITY
    inv = 1.0 / det
    sx = o[0] - v0[0]
    sy = o[1] - v0[1]
    sz = o[2] - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    qx = sy * e1[2] - sz * e1[1]
    qy = sz * e1[0] - sx * e1[2]
    qz = sx * e1[1] - sy * e1[0]
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if u >= 0.0 and v >= 0.0 and u + v <= 1.0 and t > eps:
        return t
    return INFINITY


cdef inline bint _slab(const double* o, const double* inv, const double* lo,
                       const double* hi, double t_best) noexcept nogil:
    cdef double tmin = -INFINITY, tmax = INFINITY, a, b, tmp
    cdef int ax
    for ax in range(3):
        a = (lo[ax] - o[ax]) * inv[ax]
        b = (hi[ax] - o[ax]) * inv[ax]
        if a != a or b != b:  # zero direction exactly on a slab plane
            continue
        if a > b:
            tmp = a
            a = b
            b = tmp
        if a > tmin:
            tmin = a
        if b < tmax:
            tmax = b
    if tmin < 0.0:
        tmin = 0.0
    return tmax >= tmin and tmin <= t_best


def bvh_intersect(double[:, ::1] origins, double[:, ::1] dirs, double[:, ::1] v0,
                  double[:, ::1] e1, double[:, ::1] e2, double[:, ::1] node_min,
                  double[:, ::1] node_max, i8[::1] node_left, i8[::1] node_right,
                  i8[::1] node_start, i8[::1] node_count, i8[::1] tri_index, t_max=None):
    cdef Py_ssize_t n = origins.shape[0], r, node, j, tri, top
    cdef Py_ssize_t n_nodes = node_min.shape[0]
    t_arr = np.full(n, np.inf) if t_max is None else np.array(t_max, dtype=np.float64)
    tri_arr = np.full(n, -1, dtype=np.int64)
    cdef double[::1] t_best = t_arr
    cdef i8[::1] tri_best = tri_arr
    if n == 0 or n_nodes == 0:
        return t_arr, tri_arr
    cdef i8* stack = <i8*> malloc(sizeof(i8) * (2 * n_nodes + 2))
    cdef double inv[3]
    cdef double t
    cdef int ax
    with nogil:
        for r in range(n):
            for ax in range(3):
                inv[ax] = 1.0 / dirs[r, ax]
            top = 0
            stack[top] = 0
            top = 1
            while top > 0:
                top -= 1
                node = stack[top]
                if not _slab(&origins[r, 0], inv, &node_min[node, 0], &node_max[node, 0], t_best[r]):
                    continue
                if node_count[node] > 0:
                    for j in range(node_start[node], node_start[node] + node_count[node]):
                        tri = tri_index[j]
                        t = _mt(&origins[r, 0], &dirs[r, 0], &v0[tri, 0], &e1[tri, 0], &e2[tri, 0])
                        if t < t_best[r] or (t == t_best[r] and t < INFINITY and tri < tri_best[r]):
                            t_best[r] = t
                            tri_best[r] = tri
                else:
                    stack[top] = node_right[node]
                    stack[top + 1] = node_left[node]
                    top += 2
    free(stack)
    return t_arr, tri_arr


def polygon_hits(double[:, ::1] origins, double[:, ::1] dirs, double[:, ::1] normals,
                 double[::1] offsets, double[:, :, ::1] edge_points,
                 double[:, :, ::1] edge_normals, double t_min, double tol):
    cdef Py_ssize_t n = origins.shape[0], P = normals.shape[0], E = edge_points.shape[1]
    cdef Py_ssize_t r, k, e
    t_arr = np.full(n, np.inf)
    idx_arr = np.full(n, -1, dtype=np.int64)
    face_arr = np.zeros(n, dtype=np.int64)
    cdef double[::1] tb = t_arr
    cdef i8[::1] ib = idx_arr
    cdef i8[::1] fb = face_arr
    cdef double denom, t, px, py, pz, s
    cdef bint ok
    with nogil:
        for r in range(n):
            for k in range(P):
                denom = dirs[r, 0] * normals[k, 0] + dirs[r, 1] * normals[k, 1] + dirs[r, 2] * normals[k, 2]
                if denom == 0.0:
                    continue
                t = (offsets[k] - (origins[r, 0] * normals[k, 0] + origins[r, 1] * normals[k, 1]
                                   + origins[r, 2] * normals[k, 2])) / denom
                if not (t > t_min and t < tb[r]):
                    continue
                px = origins[r, 0] + t * dirs[r, 0]
                py = origins[r, 1] + t * dirs[r, 1]
                pz = origins[r, 2] + t * dirs[r, 2]
                ok = True
                for e in range(E):
                    s = ((px - edge_points[k, e, 0]) * edge_normals[k, e, 0]
                         + (py - edge_points[k, e, 1]) * edge_normals[k, e, 1]
                         + (pz - edge_points[k, e, 2]) * edge_normals[k, e, 2])
                    if s < -tol:
                        ok = False
                        break
                if ok:
                    tb[r] = t
                    ib[r] = k
                    fb[r] = 1 if denom < 0.0 else -1
    return t_arr, idx_arr, face_arr


def hull_depth(double[:, ::1] origins, double[:, ::1] dirs, occ_in, grid_origin,
               double voxel, bint back=False):
    occ_arr = np.ascontiguousarray(occ_in, dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] occ = occ_arr
    cdef Py_ssize_t n = origins.shape[0], r
    cdef long dims[3]
    dims[0] = occ.shape[0]
    dims[1] = occ.shape[1]
    dims[2] = occ.shape[2]
    go = np.asarray(grid_origin, dtype=np.float64)
    cdef double lo[3]
    cdef double hi[3]
    cdef int ax, best
    for ax in range(3):
        lo[ax] = go[ax]
        hi[ax] = go[ax] + dims[ax] * voxel
    out_arr = np.full(n, np.inf)
    cdef double[::1] out = out_arr
    cdef double tmin, tmax, a, b, tmp, t_cur, t_leave, result
    cdef double t_next[3]
    cdef double t_delta[3]
    cdef long cell[3]
    cdef long step[3]
    cdef double p
    cdef bint miss
    with nogil:
        for r in range(n):
            tmin = -INFINITY
            tmax = INFINITY
            miss = False
            for ax in range(3):
                if dirs[r, ax] == 0.0:
                    if origins[r, ax] < lo[ax] or origins[r, ax] > hi[ax]:
                        miss = True
                    continue
                a = (lo[ax] - origins[r, ax]) / dirs[r, ax]
                b = (hi[ax] - origins[r, ax]) / dirs[r, ax]
                if a > b:
                    tmp = a
                    a = b
                    b = tmp
                if a > tmin:
                    tmin = a
                if b < tmax:
                    tmax = b
            if miss:
                continue
            if tmin < 0.0:
                tmin = 0.0
            if not tmax > tmin:
                continue
            for ax in range(3):
                p = origins[r, ax] + tmin * dirs[r, ax]
                cell[ax] = <long> floor((p - lo[ax]) / voxel)
                if cell[ax] < 0:
                    cell[ax] = 0
                if cell[ax] > dims[ax] - 1:
                    cell[ax] = dims[ax] - 1
                if dirs[r, ax] > 0:
                    step[ax] = 1
                    t_next[ax] = (lo[ax] + (cell[ax] + 1) * voxel - origins[r, ax]) / dirs[r, ax]
                    t_delta[ax] = voxel / fabs(dirs[r, ax])
                elif dirs[r, ax] < 0:
                    step[ax] = -1
                    t_next[ax] = (lo[ax] + cell[ax] * voxel - origins[r, ax]) / dirs[r, ax]
                    t_delta[ax] = voxel / fabs(dirs[r, ax])
                else:
                    step[ax] = 0
                    t_next[ax] = INFINITY
                    t_delta[ax] = INFINITY
            t_cur = tmin
            result = INFINITY
            while True:
                best = 0
                if t_next[1] < t_next[best]:
                    best = 1
                if t_next[2] < t_next[best]:
                    best = 2
                t_leave = t_next[best]
                if t_leave > tmax:
                    t_leave = tmax
                if occ[cell[0], cell[1], cell[2]]:
                    if back:
                        result = t_leave
                    else:
                        result = t_cur
                        break
                t_cur = t_next[best]
                cell[best] += step[best]
                t_next[best] += t_delta[best]
                if cell[best] < 0 or cell[best] >= dims[best] or t_cur >= tmax:
                    break
            out[r] = result
    return out_arr


# -- Gaussian compositing ------------------------------------------------------------

DEF TILE = 16


cdef _bin_tiles(Py_ssize_t height, Py_ssize_t width, i8[::1] order, i8[:, ::1] bbox):
    """Per-tile Gaussian lists (depth order kept) in CSR form."""
    cdef Py_ssize_t tw = (width + TILE - 1) // TILE, th = (height + TILE - 1) // TILE
    cdef Py_ssize_t ntiles = tw * th, i, g, tx, ty, x0, x1, y0, y1
    counts_arr = np.zeros(ntiles + 1, dtype=np.int64)
    cdef i8[::1] counts = counts_arr
    for i in range(order.shape[0]):
        g = order[i]
        x0 = max(bbox[g, 0], 0) // TILE
        x1 = min(bbox[g, 1], width - 1) // TILE
        y0 = max(bbox[g, 2], 0) // TILE
        y1 = min(bbox[g, 3], height - 1) // TILE
        if bbox[g, 1] < 0 or bbox[g, 3] < 0 or bbox[g, 0] > width - 1 or bbox[g, 2] > height - 1:
            continue
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                counts[ty * tw + tx + 1] += 1
    offsets_arr = np.cumsum(counts_arr)
    cdef i8[::1] offsets = offsets_arr
    fill_arr = offsets_arr[:-1].copy()
    cdef i8[::1] fill = fill_arr
    lists_arr = np.zeros(offsets_arr[-1], dtype=np.int64)
    cdef i8[::1] lists = lists_arr
    for i in range(order.shape[0]):
        g = order[i]
        if bbox[g, 1] < 0 or bbox[g, 3] < 0 or bbox[g, 0] > width - 1 or bbox[g, 2] > height - 1:
            continue
        x0 = max(bbox[g, 0], 0) // TILE
        x1 = min(bbox[g, 1], width - 1) // TILE
        y0 = max(bbox[g, 2], 0) // TILE
        y1 = min(bbox[g, 3], height - 1) // TILE
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                lists[fill[ty * tw + tx]] = g
                fill[ty * tw + tx] += 1
    return offsets_arr, lists_arr, tw


cdef inline double _alpha(double px, double py, Py_ssize_t g, double[:, ::1] means2d,
                          double[:, ::1] conics, double[::1] opac, i8[:, ::1] bbox,
                          double alpha_min, double alpha_max, double* G, double* dx,
                          double* dy, bint* clamped) noexcept nogil:
    """Alpha of Gaussian ``g`` at a pixel, or -1 when it does not contribute."""
    cdef double a
    if px < bbox[g, 0] or px > bbox[g, 1] or py < bbox[g, 2] or py > bbox[g, 3]:
        return -1.0
    dx[0] = px - means2d[g, 0]
    dy[0] = py - means2d[g, 1]
    G[0] = exp(-0.5 * (conics[g, 0] * dx[0] * dx[0] + 2.0 * conics[g, 1] * dx[0] * dy[0]
                       + conics[g, 2] * dy[0] * dy[0]))
    a = opac[g] * G[0]
    clamped[0] = a > alpha_max
    if clamped[0]:
        a = alpha_max
    if not a >= alpha_min:
        return -1.0
    return a


def rasterize_forward(Py_ssize_t height, Py_ssize_t width, double[:, ::1] means2d,
                      double[:, ::1] conics, double[::1] opac, double[:, ::1] colors,
                      double[::1] depths, i8[::1] order, i8[:, ::1] bbox,
                      double alpha_min, double alpha_max):
    color_arr = np.zeros((height, width, 3))
    depth_arr = np.zeros((height, width))
    alpha_arr = np.zeros((height, width))
    cdef double[:, :, ::1] color = color_arr
    cdef double[:, ::1] depth = depth_arr
    cdef double[:, ::1] alpha_img = alpha_arr
    offsets_arr, lists_arr, tw = _bin_tiles(height, width, order, bbox)
    cdef i8[::1] offsets = offsets_arr
    cdef i8[::1] lists = lists_arr
    cdef Py_ssize_t tiles_w = tw, i, j, k, g, tile
    cdef double T, a, G, dx, dy, w
    cdef bint clamped
    with nogil:
        for i in range(height):
            for j in range(width):
                tile = (i // TILE) * tiles_w + j // TILE
                T = 1.0
                for k in range(offsets[tile], offsets[tile + 1]):
                    g = lists[k]
                    a = _alpha(j, i, g, means2d, conics, opac, bbox, alpha_min, alpha_max,
                               &G, &dx, &dy, &clamped)
                    if a < 0.0:
                        continue
                    w = a * T
                    color[i, j, 0] += w * colors[g, 0]
                    color[i, j, 1] += w * colors[g, 1]
                    color[i, j, 2] += w * colors[g, 2]
                    depth[i, j] += w * depths[g]
                    T = T * (1.0 - a)
                alpha_img[i, j] = 1.0 - T
    return color_arr, depth_arr, alpha_arr


def rasterize_backward(Py_ssize_t height, Py_ssize_t width, double[:, ::1] means2d,
                       double[:, ::1] conics, double[::1] opac, double[:, ::1] colors,
                       double[::1] depths, i8[::1] order, i8[:, ::1] bbox,
                       double alpha_min, double alpha_max, d_color, d_depth, d_alpha):
    cdef Py_ssize_t n = means2d.shape[0]
    gm_arr = np.zeros((n, 2))
    gq_arr = np.zeros((n, 3))
    go_arr = np.zeros(n)
    gc_arr = np.zeros((n, 3))
    gd_arr = np.zeros(n)
    cdef double[:, ::1] gm = gm_arr
    cdef double[:, ::1] gq = gq_arr
    cdef double[::1] go = go_arr
    cdef double[:, ::1] gc = gc_arr
    cdef double[::1] gd = gd_arr
    cdef double[:, :, ::1] dC = np.ascontiguousarray(d_color, dtype=np.float64)
    cdef double[:, ::1] dD = np.ascontiguousarray(d_depth, dtype=np.float64)
    cdef double[:, ::1] dA = np.ascontiguousarray(d_alpha, dtype=np.float64)
    offsets_arr, lists_arr, tw = _bin_tiles(height, width, order, bbox)
    cdef i8[::1] offsets = offsets_arr
    cdef i8[::1] lists = lists_arr
    cdef Py_ssize_t tiles_w = tw, i, j, k, g, tile
    cdef double T, T_final, a, G, dx, dy, w, acc_r, acc_g, acc_b, acc_d, g_alpha, g_pow
    cdef double om
    cdef bint clamped
    with nogil:
        for i in range(height):
            for j in range(width):
                tile = (i // TILE) * tiles_w + j // TILE
                T = 1.0
                for k in range(offsets[tile], offsets[tile + 1]):
                    g = lists[k]
                    a = _alpha(j, i, g, means2d, conics, opac, bbox, alpha_min, alpha_max,
                               &G, &dx, &dy, &clamped)
                    if a < 0.0:
                        continue
                    T = T * (1.0 - a)
                T_final = T
                acc_r = 0.0
                acc_g = 0.0
                acc_b = 0.0
                acc_d = 0.0
                k = offsets[tile + 1] - 1
                while k >= offsets[tile]:
                    g = lists[k]
                    k -= 1
                    a = _alpha(j, i, g, means2d, conics, opac, bbox, alpha_min, alpha_max,
                               &G, &dx, &dy, &clamped)
                    if a < 0.0:
                        continue
                    om = 1.0 - a
                    T = T / om
                    w = a * T
                    gc[g, 0] += w * dC[i, j, 0]
                    gc[g, 1] += w * dC[i, j, 1]
                    gc[g, 2] += w * dC[i, j, 2]
                    gd[g] += w * dD[i, j]
                    g_alpha = (dC[i, j, 0] * T * (colors[g, 0] - acc_r)
                               + dC[i, j, 1] * T * (colors[g, 1] - acc_g)
                               + dC[i, j, 2] * T * (colors[g, 2] - acc_b)
                               + dD[i, j] * T * (depths[g] - acc_d)
                               + dA[i, j] * T_final / om)
                    acc_r = a * colors[g, 0] + om * acc_r
                    acc_g = a * colors[g, 1] + om * acc_g
                    acc_b = a * colors[g, 2] + om * acc_b
                    acc_d = a * depths[g] + om * acc_d
                    if clamped:
                        continue
                    go[g] += g_alpha * G
                    g_pow = g_alpha * a
                    gm[g, 0] += g_pow * (conics[g, 0] * dx + conics[g, 1] * dy)
                    gm[g, 1] += g_pow * (conics[g, 1] * dx + conics[g, 2] * dy)
                    gq[g, 0] += g_pow * (-0.5 * dx * dx)
                    gq[g, 1] += g_pow * (-dx * dy)
                    gq[g, 2] += g_pow * (-0.5 * dy * dy)
    return gm_arr, gq_arr, go_arr, gc_arr, gd_arr
