"""Vectorized numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and the same floating-point semantics; ``catoptra.kernels`` picks
one at import.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 1 << 21


# -- ray / triangle ------------------------------------------------------------------


def _moller_trumbore(o, d, v0, e1, e2, eps=1e-12):
    """t for every (ray, triangle) pair; inf where there is no hit.

    Shapes broadcast: rays (R, 1, 3), triangles (1, T, 3).
    """
    p = np.cross(d, e2)
    det = np.sum(e1 * p, axis=-1)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = o - v0
    u = np.sum(s * p, axis=-1) * inv
    q = np.cross(s, e1)
    v = np.sum(d * q, axis=-1) * inv
    t = np.sum(e2 * q, axis=-1) * inv
    hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > eps)
    return np.where(hit, t, np.inf)


def triangles_brute(origins, dirs, v0, e1, e2, t_max=None):
    """Nearest hit over all triangles; ties go to the lower triangle index."""
    n = len(origins)
    t_best = np.full(n, np.inf) if t_max is None else np.array(t_max, dtype=float)
    tri_best = np.full(n, -1, dtype=np.int64)
    step = max(1, _CHUNK // max(1, len(v0)))
    for s in range(0, n, step):
        o = origins[s:s + step, None, :]
        d = dirs[s:s + step, None, :]
        t = _moller_trumbore(o, d, v0[None], e1[None], e2[None])
        idx = np.argmin(t, axis=1)
        tt = t[np.arange(len(idx)), idx]
        better = tt < t_best[s:s + step]
        t_best[s:s + step] = np.where(better, tt, t_best[s:s + step])
        tri_best[s:s + step] = np.where(better, idx, tri_best[s:s + step])
    return t_best, tri_best


def bvh_intersect(origins, dirs, v0, e1, e2, node_min, node_max, node_left,
                  node_right, node_start, node_count, tri_index, t_max=None):
    """Nearest triangle hit through a flattened BVH, one ray packet per node."""
    n = len(origins)
    t_best = np.full(n, np.inf) if t_max is None else np.array(t_max, dtype=float)
    tri_best = np.full(n, -1, dtype=np.int64)
    if n == 0 or len(node_min) == 0:
        return t_best, tri_best
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_d = 1.0 / dirs
    stack = [(0, np.arange(n))]
    while stack:
        node, rays = stack.pop()
        o = origins[rays]
        inv = inv_d[rays]
        with np.errstate(invalid="ignore"):
            t0 = (node_min[node] - o) * inv
            t1 = (node_max[node] - o) * inv
        lo = np.nanmax(np.minimum(t0, t1), axis=1)
        hi = np.nanmin(np.maximum(t0, t1), axis=1)
        keep = (hi >= np.maximum(lo, 0.0)) & (lo <= t_best[rays])
        rays = rays[keep]
        if len(rays) == 0:
            continue
        count = node_count[node]
        if count > 0:
            start = node_start[node]
            tris = tri_index[start:start + count]
            t = _moller_trumbore(origins[rays, None, :], dirs[rays, None, :],
                                 v0[None, tris], e1[None, tris], e2[None, tris])
            for j, tri in enumerate(tris):
                tj = t[:, j]
                cur = t_best[rays]
                better = (tj < cur) | ((tj == cur) & (tri < tri_best[rays]) & np.isfinite(tj))
                t_best[rays] = np.where(better, tj, cur)
                tri_best[rays] = np.where(better, tri, tri_best[rays])
        else:
            stack.append((node_right[node], rays))
            stack.append((node_left[node], rays))
    return t_best, tri_best


# -- mirror polygons -------------------------------------------------------------------


def polygon_hits(origins, dirs, normals, offsets, edge_points, edge_normals, t_min, tol):
    """Nearest convex-polygon hit per ray.

    Returns ``(t, index, facing)`` where ``facing`` is +1 when the ray meets the
    polygon's normal side and -1 for its back; ``index`` is -1 without a hit.
    """
    n = len(origins)
    t_best = np.full(n, np.inf)
    idx = np.full(n, -1, dtype=np.int64)
    facing = np.zeros(n, dtype=np.int64)
    for k in range(len(normals)):
        nk = normals[k]
        denom = dirs @ nk
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (offsets[k] - origins @ nk) / denom
        ok = (denom != 0.0) & (t > t_min) & (t < t_best)
        if not ok.any():
            continue
        p = origins + t[:, None] * dirs
        for e in range(edge_points.shape[1]):
            ok &= (p - edge_points[k, e]) @ edge_normals[k, e] >= -tol
        t_best = np.where(ok, t, t_best)
        idx = np.where(ok, k, idx)
        facing = np.where(ok, np.where(denom < 0.0, 1, -1), facing)
    return t_best, idx, facing


# -- voxel traversal -----------------------------------------------------------------


def hull_depth(origins, dirs, occ, grid_origin, voxel, back=False):
    """Ray parameter of the first occupied-voxel entry (or last exit when ``back``)."""
    occ = np.ascontiguousarray(occ, dtype=np.uint8)
    dims = np.array(occ.shape)
    n = len(origins)
    out = np.full(n, np.inf)
    lo = np.asarray(grid_origin, dtype=float)
    hi = lo + dims * voxel
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    tmin = np.maximum(tmin, 0.0)
    active = np.flatnonzero(tmax > tmin)
    if len(active) == 0:
        return out
    o = origins[active]
    d = dirs[active]
    t_enter = tmin[active]
    t_exit = tmax[active]
    p = o + t_enter[:, None] * d
    cell = np.floor((p - lo) / voxel).astype(np.int64)
    cell = np.clip(cell, 0, dims - 1)
    step = np.where(d > 0, 1, np.where(d < 0, -1, 0)).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        boundary = lo + (cell + (step > 0)) * voxel
        t_next = np.where(step != 0, (boundary - o) / d, np.inf)
        t_delta = np.where(step != 0, voxel / np.abs(d), np.inf)
    t_cur = t_enter.copy()
    result = np.full(len(active), np.inf)
    alive = np.ones(len(active), dtype=bool)
    while True:
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        c = cell[idx]
        filled = occ[c[:, 0], c[:, 1], c[:, 2]].astype(bool)
        tn = t_next[idx]
        axis = np.argmin(tn, axis=1)
        t_leave = tn[np.arange(len(idx)), axis]
        t_leave = np.minimum(t_leave, t_exit[idx])
        if back:
            result[idx[filled]] = t_leave[filled]
        else:
            hit = idx[filled]
            result[hit] = t_cur[hit]
            alive[hit] = False
        moving = ~filled if not back else np.ones(len(idx), dtype=bool)
        mv = idx[moving]
        ax = axis[moving]
        t_cur[mv] = t_next[mv, ax]
        cell[mv, ax] += step[mv, ax]
        t_next[mv, ax] += t_delta[mv, ax]
        out_of = (cell[mv, ax] < 0) | (cell[mv, ax] >= dims[ax]) | (t_cur[mv] >= t_exit[mv])
        alive[mv[out_of]] = False
    out[active] = result
    return out


# -- Gaussian compositing ------------------------------------------------------------


def _alpha_block(px, py, means2d, conics, opac, bbox, alpha_min, alpha_max):
    dx = px[:, None] - means2d[None, :, 0]
    dy = py[:, None] - means2d[None, :, 1]
    a, b, c = conics[:, 0], conics[:, 1], conics[:, 2]
    power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)
    G = np.exp(power)
    raw = opac[None, :] * G
    clamped = raw > alpha_max
    alpha = np.where(clamped, alpha_max, raw)
    inbox = ((px[:, None] >= bbox[None, :, 0]) & (px[:, None] <= bbox[None, :, 1])
             & (py[:, None] >= bbox[None, :, 2]) & (py[:, None] <= bbox[None, :, 3]))
    use = inbox & (alpha >= alpha_min)
    alpha = np.where(use, alpha, 0.0)
    return alpha, G, dx, dy, clamped, use


def _transmittance(alpha):
    one_minus = 1.0 - alpha
    T = np.ones_like(alpha)
    if alpha.shape[1] > 1:
        T[:, 1:] = np.cumprod(one_minus[:, :-1], axis=1)
    return T


def rasterize_forward(height, width, means2d, conics, opac, colors, depths, order, bbox,
                      alpha_min, alpha_max):
    """Front-to-back compositing of depth-sorted 2-D Gaussians.

    Returns color (H, W, 3), depth (H, W) and accumulated alpha (H, W).
    """
    m = means2d[order]
    q = conics[order]
    o = opac[order]
    col = colors[order]
    dep = depths[order]
    bb = bbox[order]
    npix = height * width
    color = np.zeros((npix, 3))
    depth = np.zeros(npix)
    alpha_img = np.zeros(npix)
    if len(order) == 0:
        return color.reshape(height, width, 3), depth.reshape(height, width), alpha_img.reshape(height, width)
    jj, ii = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    px_all, py_all = jj.ravel(), ii.ravel()
    step = max(1, _CHUNK // len(order))
    for s in range(0, npix, step):
        alpha, *_ = _alpha_block(px_all[s:s + step], py_all[s:s + step], m, q, o, bb,
                                 alpha_min, alpha_max)
        T = _transmittance(alpha)
        wgt = alpha * T
        color[s:s + step] = wgt @ col
        depth[s:s + step] = wgt @ dep
        alpha_img[s:s + step] = 1.0 - T[:, -1] * (1.0 - alpha[:, -1])
    return color.reshape(height, width, 3), depth.reshape(height, width), alpha_img.reshape(height, width)


def rasterize_backward(height, width, means2d, conics, opac, colors, depths, order, bbox,
                       alpha_min, alpha_max, d_color, d_depth, d_alpha):
    """Gradients of a pixel loss with respect to every 2-D Gaussian attribute.

    Returns ``(d_means2d, d_conics, d_opac, d_colors, d_depths)`` in the
    caller's (unsorted) indexing; ``d_conics`` holds (a, b, c) of the conic
    ``[[a, b], [b, c]]``.
    """
    n = len(means2d)
    g_mean = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_color = np.zeros((n, 3))
    g_depth = np.zeros(n)
    if len(order) == 0:
        return g_mean, g_conic, g_opac, g_color, g_depth
    m = means2d[order]
    q = conics[order]
    o = opac[order]
    col = colors[order]
    dep = depths[order]
    bb = bbox[order]
    npix = height * width
    jj, ii = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    px_all, py_all = jj.ravel(), ii.ravel()
    dC = d_color.reshape(npix, 3)
    dD = d_depth.reshape(npix)
    dA = d_alpha.reshape(npix)
    k = len(order)
    sm = np.zeros((k, 2))
    sq = np.zeros((k, 3))
    so = np.zeros(k)
    sc = np.zeros((k, 3))
    sd = np.zeros(k)
    step = max(1, _CHUNK // k)
    for s in range(0, npix, step):
        px = px_all[s:s + step]
        py = py_all[s:s + step]
        alpha, G, dx, dy, clamped, use = _alpha_block(px, py, m, q, o, bb, alpha_min, alpha_max)
        T = _transmittance(alpha)
        wgt = alpha * T
        T_final = T[:, -1] * (1.0 - alpha[:, -1])
        one_minus = 1.0 - alpha
        # contribution of everything behind each Gaussian, divided by (1 - alpha_i)
        def behind(values):
            contrib = wgt[..., None] * values[None] if values.ndim == 2 else wgt * values[None]
            total = contrib.sum(axis=1, keepdims=True)
            return total - np.cumsum(contrib, axis=1)

        bc = behind(col)
        bd = behind(dep)
        g_alpha = np.einsum("pc,pkc->pk", dC[s:s + step], T[..., None] * col[None] - bc / one_minus[..., None])
        g_alpha += dD[s:s + step, None] * (T * dep[None] - bd / one_minus)
        g_alpha += dA[s:s + step, None] * (T_final[:, None] / one_minus)
        g_alpha = np.where(use & ~clamped, g_alpha, 0.0)
        sc += wgt.T @ dC[s:s + step]
        sd += wgt.T @ dD[s:s + step]
        so += np.sum(g_alpha * G, axis=0)
        g_pow = g_alpha * alpha
        a, b, c = q[:, 0], q[:, 1], q[:, 2]
        sm[:, 0] += np.sum(g_pow * (a * dx + b * dy), axis=0)
        sm[:, 1] += np.sum(g_pow * (b * dx + c * dy), axis=0)
        sq[:, 0] += np.sum(g_pow * (-0.5 * dx * dx), axis=0)
        sq[:, 1] += np.sum(g_pow * (-dx * dy), axis=0)
        sq[:, 2] += np.sum(g_pow * (-0.5 * dy * dy), axis=0)
    g_mean[order] = sm
    g_conic[order] = sq
    g_opac[order] = so
    g_color[order] = sc
    g_depth[order] = sd
    return g_mean, g_conic, g_opac, g_color, g_depth
