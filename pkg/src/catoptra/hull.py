"""Silhouette carving on a voxel grid and hull depth rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import EmptyHull, ShapeMismatch
from .unfolding import CameraPose


@dataclass(eq=False)
class VisualHull:
    grid: np.ndarray  # (nx, ny, nz) bool
    origin: np.ndarray  # corner of voxel (0, 0, 0)
    voxel_size: float

    @property
    def dims(self) -> tuple:
        return self.grid.shape

    @property
    def occupied(self) -> int:
        return int(self.grid.sum())

    @property
    def volume(self) -> float:
        return self.occupied * self.voxel_size ** 3

    def centers(self, index: np.ndarray | None = None) -> np.ndarray:
        if index is None:
            index = np.argwhere(self.grid)
        return self.origin + (np.asarray(index) + 0.5) * self.voxel_size

    def voxel_index(self, points: np.ndarray) -> np.ndarray:
        return np.floor((np.asarray(points) - self.origin) / self.voxel_size).astype(np.int64)

    def near_occupied(self, points: np.ndarray, reach: int = 1) -> np.ndarray:
        """True where a point lies in, or within ``reach`` voxels of, an occupied voxel."""
        idx = self.voxel_index(points)
        dims = np.array(self.dims)
        out = np.zeros(len(idx), dtype=bool)
        rng = range(-reach, reach + 1)
        for dx in rng:
            for dy in rng:
                for dz in rng:
                    q = idx + np.array([dx, dy, dz])
                    inside = np.all((q >= 0) & (q < dims), axis=1)
                    qc = np.clip(q, 0, dims - 1)
                    out |= inside & self.grid[qc[:, 0], qc[:, 1], qc[:, 2]]
        return out


def grid_for_bounds(lo, hi, resolution: int):
    """Cubic voxels: the longest side of the box gets ``resolution`` cells."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    extent = hi - lo
    if not np.all(np.isfinite(extent)) or extent.max() <= 0 or resolution < 1:
        raise ValueError("bounds need a positive finite extent and resolution >= 1")
    voxel = float(extent.max()) / resolution
    dims = np.maximum(1, np.ceil(extent / voxel - 1e-9).astype(int))
    center = 0.5 * (lo + hi)
    origin = center - 0.5 * dims * voxel
    return origin, voxel, tuple(int(d) for d in dims)


def carve(views, cameras, bounds, resolution: int = 256, dilation: float = 1.0,
          slab: int = 8) -> VisualHull:
    """Keep voxels whose centers fall inside every silhouette.

    Silhouettes are grown by ``dilation`` pixels (Euclidean) so the
    voxel-center test stays a superset of the object up to one voxel.
    ``bounds`` is a ``(lo, hi)`` pair of world corners. Voxels projecting
    outside a view's image or onto pixels flagged invalid are carved away.
    """
    if len(views) != len(cameras):
        raise ShapeMismatch("need one camera per view")
    if not any(v.silhouette.any() for v in views):
        raise EmptyHull("every silhouette is empty")
    lo, hi = bounds
    origin, voxel, dims = grid_for_bounds(lo, hi, resolution)
    dilated = []
    for view, cam in zip(views, cameras):
        k = cam.intrinsics
        if view.silhouette.shape != (k.height, k.width):
            raise ShapeMismatch("silhouette resolution differs from the camera intrinsics")
        if view.silhouette.any():
            dist = ndimage.distance_transform_edt(~view.silhouette)
            dilated.append((dist <= dilation) & view.validity)
        else:
            dilated.append(np.zeros_like(view.silhouette))
    grid = np.zeros(dims, dtype=bool)
    ii, jj = np.meshgrid(np.arange(dims[1]), np.arange(dims[2]), indexing="ij")
    for x0 in range(0, dims[0], slab):
        xs = np.arange(x0, min(dims[0], x0 + slab))
        idx = np.stack(np.broadcast_arrays(xs[:, None, None], ii[None], jj[None]), axis=-1).reshape(-1, 3)
        pts = origin + (idx + 0.5) * voxel
        keep = np.ones(len(pts), dtype=bool)
        for sil, cam in zip(dilated, cameras):
            u, v, depth = cam.project(pts[keep])
            k = cam.intrinsics
            col = np.rint(u)
            row = np.rint(v)
            ok = (col >= 0) & (col < k.width) & (row >= 0) & (row < k.height) & (depth > 0)
            ci = np.clip(col, 0, k.width - 1).astype(np.int64)
            ri = np.clip(row, 0, k.height - 1).astype(np.int64)
            sub = np.flatnonzero(keep)
            keep[sub] = ok & sil[ri, ci]
            if not keep.any():
                break
        grid[xs[0]:xs[-1] + 1] = keep.reshape(len(xs), dims[1], dims[2])
    if not grid.any():
        raise EmptyHull("no voxel is consistent with every silhouette")
    return VisualHull(grid, origin, voxel)


def hull_depth(hull: VisualHull, camera: CameraPose, back: bool = False) -> np.ndarray:
    """Axial depth of the first hull entry per pixel (last exit when ``back``); inf off the hull."""
    k = camera.intrinsics
    jj, ii = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
    o, d, axial = camera.rays(jj.ravel(), ii.ravel())
    t = kernels.hull_depth(np.ascontiguousarray(o), np.ascontiguousarray(d),
                           hull.grid, hull.origin, float(hull.voxel_size), bool(back))
    return (t * axial.ravel()).reshape(k.height, k.width)


def surface_mask(grid: np.ndarray) -> np.ndarray:
    """Occupied voxels with at least one empty (or out-of-grid) 6-neighbor."""
    padded = np.pad(grid, 1, constant_values=False)
    interior = np.ones_like(grid)
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return grid & ~interior


def coarsen(grid: np.ndarray, stride: int) -> np.ndarray:
    """Block-wise OR over ``stride``-sized cubes (partial blocks at the far edges kept)."""
    if stride == 1:
        return grid
    dims = np.array(grid.shape)
    pad = (-dims) % stride
    g = np.pad(grid, [(0, p) for p in pad], constant_values=False)
    s = g.shape
    return g.reshape(s[0] // stride, stride, s[1] // stride, stride, s[2] // stride, stride).any(axis=(1, 3, 5))


def hull_to_point_cloud(hull: VisualHull, stride: int = 1):
    """Surface-voxel centers with outward normal estimates.

    ``stride`` coarsens the grid first, so point counts drop roughly as
    ``1 / stride**2``.
    """
    if not hull.grid.any():
        raise EmptyHull("cannot sample an empty hull")
    g = coarsen(hull.grid, stride)
    voxel = hull.voxel_size * stride
    surf = surface_mask(g)
    idx = np.argwhere(surf)
    points = hull.origin + (idx + 0.5) * voxel
    field = ndimage.gaussian_filter(np.pad(g.astype(float), 2), sigma=1.0)
    grads = np.stack(np.gradient(field), axis=-1)[idx[:, 0] + 2, idx[:, 1] + 2, idx[:, 2] + 2]
    normals = -grads
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    fallback = points - hull.centers().mean(axis=0)
    fallback /= np.maximum(np.linalg.norm(fallback, axis=1, keepdims=True), 1e-12)
    normals = np.where(norm > 1e-9, normals / np.maximum(norm, 1e-300), fallback)
    return points, normals


def write_hull(path, hull: VisualHull):
    from .imaging_io import write_grid

    return write_grid(path, hull.grid, hull.origin, hull.voxel_size)


def read_hull(path) -> VisualHull:
    from .imaging_io import read_grid

    grid, origin, voxel = read_grid(path)
    return VisualHull(grid, origin, voxel)
