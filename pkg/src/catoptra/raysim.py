"""Physical ray tracing through the mirror lens, direct virtual renders, and oracles.

Mirror ids are ``2k`` for the inner mirror of pair ``k`` and ``2k + 1`` for
its outer mirror. A legal path is exactly M1_k then M2_k on their reflective
sides; any further mirror hit after that (scene ignored) is an
inter-reflection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConditionViolation, ShapeMismatch
from .imaging_io import BACKGROUND_COLOR, HOUSING_COLOR
from .lens import MirrorPairConfig, ViewingVolume, apex_angle, pair_profile
from .unfolding import CameraPose, VirtualCameraRig, place_mirrors

MISS = 0
OK = 1
INTERREFLECTION = 2
ESCAPED = 3  # left M1 but missed M2 (condition ii territory)

STATUS_NAMES = {MISS: "miss", OK: "ok", INTERREFLECTION: "interreflection", ESCAPED: "escaped"}


@dataclass(eq=False)
class RenderedView:
    color: np.ndarray  # (H, W, 3) float in [0, 1]
    depth: np.ndarray  # (H, W) axial depth, inf off the silhouette
    silhouette: np.ndarray  # (H, W) bool
    validity: np.ndarray  # (H, W) bool

    def __post_init__(self):
        shape = self.validity.shape
        if self.color.shape[:2] != shape or self.depth.shape != shape or self.silhouette.shape != shape:
            raise ShapeMismatch("view arrays disagree in shape")

    @property
    def shape(self):
        return self.validity.shape


@dataclass(eq=False)
class MosaicImage:
    color: np.ndarray  # (H, W, 3) as seen by the physical camera
    depth: np.ndarray  # unfolded path length, inf where no scene hit on a legal path
    silhouette: np.ndarray
    multiview_mask: np.ndarray  # (H, W) int, pair id or -1
    camera: CameraPose

    @property
    def n_views(self) -> int:
        return int(self.multiview_mask.max()) + 1 if (self.multiview_mask >= 0).any() else 0


@dataclass(eq=False)
class HitRecord:
    """Per-ray outcome of a physical trace (arrays of length N)."""

    status: np.ndarray
    mirrors: np.ndarray  # (N, 3) mirror ids along the path, -1 padded
    points: np.ndarray  # (N, 3, 3) bounce points, nan padded
    incidence: np.ndarray  # (N, 2) incidence angles at the two legal bounces
    exit_origin: np.ndarray  # (N, 3) last legal bounce point
    exit_dir: np.ndarray  # (N, 3)
    path_length: np.ndarray  # camera-plane to last legal bounce
    scene_t: np.ndarray  # exit_origin to scene hit, inf on miss
    depth: np.ndarray  # unfolded depth to the scene hit (inf on miss or invalid)
    color: np.ndarray  # (N, 3)

    @property
    def pair(self) -> np.ndarray:
        first = self.mirrors[:, 0]
        return np.where(self.status == OK, first // 2, -1)


@dataclass(eq=False)
class MirrorSet:
    """Flattened mirror polygons ready for the polygon-hit kernel."""

    normals: np.ndarray
    offsets: np.ndarray
    edge_points: np.ndarray
    edge_normals: np.ndarray
    scale: float

    @classmethod
    def from_pairs(cls, pairs) -> "MirrorSet":
        planes = [m for pair in pairs for m in pair]
        normals = np.array([m.normal for m in planes])
        offsets = np.array([m.offset for m in planes])
        pts = np.array([m.polygon for m in planes])
        nxt = np.roll(pts, -1, axis=1)
        centroid = pts.mean(axis=1, keepdims=True)
        en = np.cross(normals[:, None, :], nxt - pts)
        en /= np.linalg.norm(en, axis=2, keepdims=True)
        inward = np.sum((centroid - pts) * en, axis=2) > 0
        en = np.where(inward[..., None], en, -en)
        scale = float(np.abs(pts).max())
        return cls(np.ascontiguousarray(normals), np.ascontiguousarray(offsets),
                   np.ascontiguousarray(pts), np.ascontiguousarray(en), scale)

    def hits(self, origins, dirs, t_min):
        return kernels.polygon_hits(np.ascontiguousarray(origins), np.ascontiguousarray(dirs),
                                    self.normals, self.offsets, self.edge_points,
                                    self.edge_normals, float(t_min), 1e-12 * self.scale)


def _reflect(d, n):
    return d - 2.0 * np.sum(d * n, axis=1, keepdims=True) * n


def trace_paths(origins, dirs, mirrors: MirrorSet, scene=None) -> HitRecord:
    """Trace camera rays through the mirrors and (optionally) into the scene."""
    origins = np.ascontiguousarray(origins, dtype=float)
    dirs = np.ascontiguousarray(dirs, dtype=float)
    n = len(origins)
    eps = 1e-9 * mirrors.scale
    status = np.full(n, MISS, dtype=np.int64)
    ids = np.full((n, 3), -1, dtype=np.int64)
    pts = np.full((n, 3, 3), np.nan)
    inc = np.full((n, 2), np.nan)

    t1, m1, f1 = mirrors.hits(origins, dirs, 0.0)
    ids[:, 0] = m1
    first = (m1 >= 0) & (m1 % 2 == 0) & (f1 > 0)
    p1 = origins + np.where(np.isfinite(t1), t1, 0.0)[:, None] * dirs
    pts[m1 >= 0, 0] = p1[m1 >= 0]
    n1 = mirrors.normals[np.maximum(m1, 0)]
    inc[first, 0] = np.arccos(np.clip(-np.sum(dirs[first] * n1[first], axis=1), -1, 1))
    d1 = _reflect(dirs, n1)

    idx = np.flatnonzero(first)
    t2, m2, f2 = mirrors.hits(p1[idx], d1[idx], eps)
    ids[idx, 1] = m2
    legal2 = (m2 == m1[idx] + 1) & (f2 > 0)
    status[idx[m2 < 0]] = ESCAPED
    status[idx[(m2 >= 0) & ~legal2]] = INTERREFLECTION
    idx2 = idx[legal2]
    t2 = t2[legal2]
    p2 = p1[idx2] + t2[:, None] * d1[idx2]
    pts[idx2, 1] = p2
    n2 = mirrors.normals[m2[legal2]]
    inc[idx2, 1] = np.arccos(np.clip(-np.sum(d1[idx2] * n2, axis=1), -1, 1))
    d2 = _reflect(d1[idx2], n2)

    t3, m3, _ = mirrors.hits(p2, d2, eps)
    ids[idx2, 2] = m3
    third = m3 >= 0
    pts[idx2[third], 2] = p2[third] + t3[third, None] * d2[third]
    status[idx2[third]] = INTERREFLECTION
    status[idx2[~third]] = OK

    exit_o = np.full((n, 3), np.nan)
    exit_d = np.full((n, 3), np.nan)
    path = np.full(n, np.inf)
    exit_o[idx2] = p2
    exit_d[idx2] = d2
    path[idx2] = t1[idx2] + t2
    scene_t = np.full(n, np.inf)
    depth = np.full(n, np.inf)
    color = np.tile(HOUSING_COLOR, (n, 1)).astype(float)
    ok = np.flatnonzero(status == OK)
    color[ok] = BACKGROUND_COLOR
    if scene is not None and len(ok):
        o, d = exit_o[ok], exit_d[ok]
        t, normals, which = scene.intersect(o, d)
        hit = np.isfinite(t)
        scene_t[ok] = t
        depth[ok] = path[ok] + t
        hp = o[hit] + t[hit, None] * d[hit]
        color[ok[hit]] = scene.shade(hp, normals[hit], which[hit], d[hit])
    return HitRecord(status, ids, pts, inc, exit_o, exit_d, path, scene_t, depth, color)


def trace_ray(origin, direction, rig_or_mirrors, scene=None) -> HitRecord:
    """Single-ray convenience wrapper around :func:`trace_paths`."""
    mirrors = _mirror_set(rig_or_mirrors)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return trace_paths(np.asarray(origin, float)[None], d[None], mirrors, scene)


def _mirror_set(obj) -> MirrorSet:
    if isinstance(obj, MirrorSet):
        return obj
    if isinstance(obj, VirtualCameraRig):
        return MirrorSet.from_pairs(obj.mirrors)
    if isinstance(obj, MirrorPairConfig):
        return MirrorSet.from_pairs(place_mirrors(obj))
    return MirrorSet.from_pairs(obj)


# -- rendering -------------------------------------------------------------------------


def _chunks(n, size):
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))


def render_view(camera: CameraPose, scene, samples: int = 1, chunk: int = 1 << 18) -> RenderedView:
    """Direct render from a virtual camera.

    Color is the mean of ``samples x samples`` box-filter rays per pixel;
    silhouette and depth come from the pixel-center ray.
    """
    k = camera.intrinsics
    H, W = k.height, k.width
    u, v = camera.pixel_grid(samples)
    su, sv = u.reshape(-1), v.reshape(-1)
    color = np.empty((len(su), 3))
    for sl in _chunks(len(su), chunk):
        o, d, _ = camera.rays(su[sl], sv[sl])
        t, normals, which = scene.intersect(o, d)
        c = np.tile(BACKGROUND_COLOR, (len(t), 1)).astype(float)
        hit = np.isfinite(t)
        if hit.any():
            c[hit] = scene.shade(o[hit] + t[hit, None] * d[hit], normals[hit], which[hit], d[hit])
        color[sl] = c
    color = color.reshape(H, W, samples * samples, 3).mean(axis=2)
    jj, ii = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    depth = np.empty(H * W)
    cu, cv = jj.ravel(), ii.ravel()
    for sl in _chunks(H * W, chunk):
        o, d, axial = camera.rays(cu[sl], cv[sl])
        t, _, _ = scene.intersect(o, d)
        depth[sl] = t * axial
    depth = depth.reshape(H, W)
    sil = np.isfinite(depth)
    return RenderedView(color, depth, sil, np.ones((H, W), dtype=bool))


def render_views(cameras, scene, samples: int = 1) -> list:
    return [render_view(c, scene, samples) for c in cameras]


def render_virtual_views(rig: VirtualCameraRig, scene, held_out: int = 24, samples: int = 1,
                         offset: float | None = None):
    """Reference renders from the rig plus ``held_out`` ring views.

    Returns ``(reference_views, held_out_views, held_out_poses)``.
    """
    from .unfolding import ring_poses

    refs = render_views(rig.cameras, scene, samples)
    poses = ring_poses(rig, held_out, offset) if held_out else []
    return refs, render_views(poses, scene, samples), poses


def render_snapshot(rig: VirtualCameraRig, scene, samples: int = 1,
                    chunk: int = 1 << 18, check: bool = True) -> MosaicImage:
    """What the single physical camera records through all mirror pairs.

    A mosaic pixel belongs to sub-view ``k`` only when every one of its
    samples follows the legal path through pair ``k``.
    """
    if check and rig.lens is not None:
        from .lens import require_valid

        require_valid(rig.lens)
    cam = rig.real_camera
    mirrors = MirrorSet.from_pairs(rig.mirrors)
    k = cam.intrinsics
    H, W = k.height, k.width
    u, v = cam.pixel_grid(samples)
    su, sv = u.reshape(-1), v.reshape(-1)
    ss = samples * samples
    color = np.empty((len(su), 3))
    pair = np.empty(len(su), dtype=np.int64)
    for sl in _chunks(len(su), chunk):
        o, d, _ = cam.rays(su[sl], sv[sl])
        rec = trace_paths(o, d, mirrors, scene)
        color[sl] = rec.color
        pair[sl] = rec.pair
    color = color.reshape(H, W, ss, 3).mean(axis=2)
    pair = pair.reshape(H, W, ss)
    mask = np.where(np.all(pair == pair[..., :1], axis=2), pair[..., 0], -1)

    jj, ii = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    cu, cv = jj.ravel(), ii.ravel()
    depth = np.empty(H * W)
    for sl in _chunks(H * W, chunk):
        o, d, _ = cam.rays(cu[sl], cv[sl])
        rec = trace_paths(o, d, mirrors, scene)
        depth[sl] = np.where(rec.status == OK, rec.depth, np.inf)
    depth = depth.reshape(H, W)
    depth = np.where(mask >= 0, depth, np.inf)
    return MosaicImage(color, depth, np.isfinite(depth), mask, cam)


def extract_subview(mosaic: MosaicImage, k: int) -> RenderedView:
    """Sub-image ``k`` of a mosaic in the physical camera's pixel grid."""
    valid = mosaic.multiview_mask == k
    color = np.where(valid[..., None], mosaic.color, BACKGROUND_COLOR)
    sil = valid & mosaic.silhouette
    depth = np.where(sil, mosaic.depth, np.inf)
    return RenderedView(color, depth, sil, valid)


def mosaic_to_views(mosaic: MosaicImage, rig: VirtualCameraRig, samples: int = 1) -> list:
    """Re-project every sub-image onto its zero-roll virtual camera."""
    from .unfolding import reproject_view

    return [reproject_view(extract_subview(mosaic, k), rig.unfolded[k], rig.cameras[k], samples)
            for k in range(len(rig.cameras))]


# -- oracles ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasuredVolume:
    volume: ViewingVolume
    vertices: np.ndarray  # (4, 2) rhombus in the (r, z) cross-section
    direction_spread: float  # max angular deviation inside the bundle, radians
    incidence_error: float  # max |in - out| angle mismatch at any bounce
    rays_ok: int
    rays_total: int


def _line_intersection(p, d, q, e):
    A = np.column_stack([d, -e])
    s, _ = np.linalg.solve(A, q - p)
    return p + s * d


def envelope_oracle(cfg: MirrorPairConfig, samples: int = 10_000, n_pairs: int = 8) -> MeasuredVolume:
    """Measure the viewing volume by tracing parallel bundles through opposite pairs.

    The bundles run in the vertical plane of pairs 0 and ``n_pairs / 2`` from
    M1's upper edge to its lower edge (edges included).
    """
    apex_angle(cfg)  # condition (i)
    if n_pairs % 2:
        raise ValueError("the oracle needs an even number of pairs")
    prof = pair_profile(cfg)
    mirrors = MirrorSet.from_pairs(place_mirrors(cfg, n_pairs))
    z0 = prof.top + 0.1 * cfg.h1
    r = np.linspace(prof.A[0], prof.B[0], samples)
    beams = []
    spread = 0.0
    inc_err = 0.0
    ok_total = 0
    for sign in (1.0, -1.0):
        origins = np.column_stack([sign * r, np.zeros(samples), np.full(samples, z0)])
        dirs = np.tile([0.0, 0.0, -1.0], (samples, 1))
        rec = trace_paths(origins, dirs, mirrors)
        good = rec.status == OK
        ok_total += int(good.sum())
        if good.sum() < 2:
            raise ConditionViolation("oracle bundle produced fewer than two legal rays")
        o = rec.exit_origin[good][:, [0, 2]]
        d = rec.exit_dir[good][:, [0, 2]]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        mean_d = d.mean(axis=0)
        mean_d /= np.linalg.norm(mean_d)
        spread = max(spread, float(np.max(np.arccos(np.clip(d @ mean_d, -1, 1)))))
        inc_err = max(inc_err, float(np.nanmax(np.abs(rec.incidence[good, 0] - cfg.alpha1))),
                      float(np.nanmax(np.abs(rec.incidence[good, 1] - (2 * cfg.alpha1 - cfg.alpha2)))))
        # perpendicular offset of each exit line; the extremes bound the beam
        perp = np.array([-mean_d[1], mean_d[0]])
        off = o @ perp
        lo, hi = np.argmin(off), np.argmax(off)
        beams.append((o[lo], o[hi], mean_d, float(off[hi] - off[lo])))
    (a0, a1, da, wa), (b0, b1, db, wb) = beams
    verts = np.array([_line_intersection(p, da, q, db) for p in (a0, a1) for q in (b0, b1)])
    theta = float(math.atan2(abs(beams[0][2][0]), -beams[0][2][1]))
    base = float(verts[:, 0].max() - verts[:, 0].min())
    height = float(verts[:, 1].max() - verts[:, 1].min())
    width = 0.5 * (wa + wb)
    # order vertices around the centroid for polygon tests
    c = verts.mean(axis=0)
    ang = np.arctan2(verts[:, 1] - c[1], verts[:, 0] - c[0])
    verts = verts[np.argsort(ang)]
    vol = ViewingVolume(theta=theta, beta=math.pi / 2 - theta, base_length=base,
                        beam_width=width, height=height, apex_fov=2 * theta)
    return MeasuredVolume(vol, verts, spread, inc_err, ok_total, 2 * samples)


def extreme_ray_clearance(cfg: MirrorPairConfig) -> tuple[float, HitRecord]:
    """Distance from M1's lower edge to the exit ray of the ray that hits M1's upper edge.

    Returns the signed clearance (positive when the ray passes outside and
    below the edge, i.e. free of inter-reflection) and the trace.
    """
    prof = pair_profile(cfg)
    mirrors = MirrorSet.from_pairs(place_mirrors(cfg))
    z0 = prof.top + 0.1 * cfg.h1
    rec = trace_paths(np.array([[prof.A[0], 0.0, z0]]), np.array([[0.0, 0.0, -1.0]]), mirrors)
    o = rec.points[0, 1][[0, 2]]
    d = rec.exit_dir[0][[0, 2]]
    if not np.all(np.isfinite(o)):
        raise ConditionViolation("the extreme ray does not reach M2")
    to_b = prof.B - o
    # the ray runs inward and down; B must stay on its upper side
    return float(d[1] * to_b[0] - d[0] * to_b[1]), rec


def silhouette_visibility(views) -> float:
    """Mean fraction of valid pixels covered by the silhouette across views."""
    fr = [v.silhouette.sum() / max(1, v.validity.sum()) for v in views]
    return float(np.mean(fr))


def lateral_coverage(cameras, scene, max_normal_z: float = 0.5) -> float:
    """Mean projected area (world units^2) of side-facing surface seen per view.

    A pixel counts when its center ray first hits a surface whose normal is
    within ``acos(max_normal_z)`` of horizontal. Pinhole pixels are weighted
    by their footprint at the hit depth.
    """
    areas = []
    for cam in cameras:
        k = cam.intrinsics
        jj, ii = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
        o, d, axial = cam.rays(jj.ravel(), ii.ravel())
        t, normals, _ = scene.intersect(o, d)
        side = np.isfinite(t) & (np.abs(normals[:, 2]) < max_normal_z)
        if k.model == "orthographic":
            px = np.full(len(t), 1.0 / k.focal ** 2)
        else:
            px = np.where(side, (t * axial / k.focal) ** 2, 0.0)
        areas.append(float(np.sum(px[side])))
    return float(np.mean(areas))
