"""Camera poses, plane reflections and the virtual camera ring.

World frame: origin at the viewing-volume center, +z up, the physical camera
above the mirrors looking straight down. Camera frames follow the usual
x-right, y-down, z-forward convention; ``R`` maps world to camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GeometryMismatch
from .lens import MirrorPairConfig, pair_profile, require_valid

RIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Intrinsics:
    model: str  # "orthographic" or "pinhole"
    focal: float  # pixels per world unit (orthographic) or focal length in pixels
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.model not in ("orthographic", "pinhole"):
            raise ValueError(f"unknown camera model {self.model!r}")
        if self.width <= 0 or self.height <= 0 or not self.focal > 0:
            raise ValueError("resolution and focal must be positive")

    @classmethod
    def centered(cls, model, focal, width, height=None):
        height = width if height is None else height
        return cls(model, float(focal), (width - 1) / 2.0, (height - 1) / 2.0,
                   int(width), int(height))

    def scaled_to(self, width: int, height: int | None = None) -> "Intrinsics":
        """Same field of view sampled on a different pixel grid."""
        height = width if height is None else height
        s = width / self.width
        return Intrinsics(self.model, self.focal * s, (self.cx + 0.5) * s - 0.5,
                          (self.cy + 0.5) * s - 0.5, int(width), int(height))

    def to_dict(self) -> dict:
        return {"model": self.model, "focal": self.focal, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(d["model"], float(d["focal"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class CameraPose:
    R: np.ndarray  # world-to-camera, det = +-1
    t: np.ndarray
    intrinsics: Intrinsics

    @property
    def handedness(self) -> int:
        return 1 if np.linalg.det(self.R) > 0 else -1

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def axis(self) -> np.ndarray:
        """Viewing direction in world coordinates."""
        return self.R[2].copy()

    def with_intrinsics(self, intrinsics: Intrinsics) -> "CameraPose":
        return replace(self, intrinsics=intrinsics)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.R.T + self.t

    def project(self, points: np.ndarray):
        """Pixel coordinates ``(u, v)`` and axial depth of world points."""
        pc = self.to_camera(points)
        k = self.intrinsics
        depth = pc[..., 2]
        if k.model == "orthographic":
            u = k.focal * pc[..., 0] + k.cx
            v = k.focal * pc[..., 1] + k.cy
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                u = k.focal * pc[..., 0] / depth + k.cx
                v = k.focal * pc[..., 1] / depth + k.cy
        return u, v, depth

    def rays(self, u: np.ndarray, v: np.ndarray):
        """World ray origins, unit directions, and the axial depth per unit length."""
        k = self.intrinsics
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        xs = (u - k.cx) / k.focal
        ys = (v - k.cy) / k.focal
        if k.model == "orthographic":
            origins = self.center + xs[..., None] * self.R[0] + ys[..., None] * self.R[1]
            dirs = np.broadcast_to(self.R[2], origins.shape).copy()
            return origins, dirs, np.ones(u.shape)
        local = np.stack([xs, ys, np.ones_like(xs)], axis=-1)
        norm = np.linalg.norm(local, axis=-1)
        dirs = (local / norm[..., None]) @ self.R
        origins = np.broadcast_to(self.center, dirs.shape).copy()
        return origins, dirs, 1.0 / norm

    def pixel_grid(self, samples: int = 1):
        """(u, v) sample positions, shape (H, W, s*s), a regular grid per pixel."""
        k = self.intrinsics
        offs = (np.arange(samples) + 0.5) / samples - 0.5
        ou, ov = np.meshgrid(offs, offs)
        jj, ii = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
        u = jj[..., None] + ou.ravel()[None, None, :]
        v = ii[..., None] + ov.ravel()[None, None, :]
        return u, v

    def to_dict(self, name: str | None = None) -> dict:
        pose = np.hstack([self.R, self.t[:, None]])
        out = {"pose": [float(x) for x in pose.ravel()], "handedness": self.handedness}
        if name is not None:
            out["name"] = name
        return out

    @classmethod
    def from_dict(cls, d: dict, intrinsics: Intrinsics) -> "CameraPose":
        pose = np.asarray(d["pose"], dtype=float).reshape(3, 4)
        return cls(pose[:, :3].copy(), pose[:, 3].copy(), intrinsics)


def look_at(center, target, intrinsics: Intrinsics, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Zero-roll camera at ``center`` looking at ``target``: image x stays horizontal."""
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    return pose_from_axis(center, z, intrinsics, up)


def pose_from_axis(center, axis, intrinsics: Intrinsics, up=(0.0, 0.0, 1.0)) -> CameraPose:
    z = np.asarray(axis, dtype=float)
    z = z / np.linalg.norm(z)
    down = -np.asarray(up, dtype=float)
    y = down - np.dot(down, z) * z
    ny = np.linalg.norm(y)
    if ny < 1e-12:
        # looking along the up axis: keep image y on world -y
        y, ny = np.array([0.0, -1.0, 0.0]), 1.0
    y = y / ny
    x = np.cross(y, z)
    R = np.stack([x, y, z])
    return CameraPose(R, -R @ np.asarray(center, dtype=float), intrinsics)


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_pose(pose: CameraPose, Q: np.ndarray) -> CameraPose:
    """Move a camera rigidly by the world rotation ``Q`` about the origin."""
    return CameraPose(pose.R @ Q.T, pose.t.copy(), pose.intrinsics)


@dataclass(frozen=True, eq=False)
class MirrorPlane:
    normal: np.ndarray  # reflective side
    offset: float  # plane is {x : normal . x = offset}
    polygon: np.ndarray  # (4, 3) corners, convex, in order
    name: str = ""

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("mirror normal must be unit length")
        off = np.abs(self.polygon @ n - self.offset)
        scale = max(1.0, float(np.abs(self.polygon).max()))
        if off.max() > 1e-12 * scale:
            raise ValueError("mirror polygon is not coplanar with its plane")

    @classmethod
    def through(cls, normal, polygon, name=""):
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        poly = np.asarray(polygon, dtype=float)
        c = float(np.mean(poly @ n))
        # project corners onto the plane to remove rounding drift
        poly = poly - np.outer(poly @ n - c, n)
        return cls(n, c, poly, name)

    @property
    def householder(self) -> np.ndarray:
        return np.eye(3) - 2.0 * np.outer(self.normal, self.normal)

    def reflect_points(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p - 2.0 * (p @ self.normal - self.offset)[..., None] * self.normal

    def reflect_dirs(self, dirs: np.ndarray) -> np.ndarray:
        d = np.asarray(dirs, dtype=float)
        return d - 2.0 * (d @ self.normal)[..., None] * self.normal


def reflect_pose(pose: CameraPose, plane: MirrorPlane) -> CameraPose:
    """Mirror image of a camera; each reflection flips the handedness."""
    R = pose.R @ plane.householder
    t = pose.t + 2.0 * plane.offset * (pose.R @ plane.normal)
    return CameraPose(R, t, pose.intrinsics)


def place_mirrors(cfg: MirrorPairConfig, n_pairs: int = 8, azimuth0: float = 0.0):
    """M1/M2 planes of every pair, tiling two nested n-gonal pyramid frusta."""
    prof = pair_profile(cfg)
    half = math.tan(math.pi / n_pairs)
    pairs = []
    for k in range(n_pairs):
        phi = azimuth0 + 2.0 * math.pi * k / n_pairs
        u = np.array([math.cos(phi), math.sin(phi), 0.0])
        t = np.array([-math.sin(phi), math.cos(phi), 0.0])
        z = np.array([0.0, 0.0, 1.0])

        def lift(p2):
            return p2[0] * u + p2[1] * z

        def quad(p, q):
            return np.array([lift(p) - p[0] * half * t, lift(q) - q[0] * half * t,
                             lift(q) + q[0] * half * t, lift(p) + p[0] * half * t])

        m1 = MirrorPlane.through(prof.n1[0] * u + prof.n1[1] * z, quad(prof.A, prof.B), f"M1_{k}")
        m2 = MirrorPlane.through(prof.n2[0] * u + prof.n2[1] * z, quad(prof.C, prof.D), f"M2_{k}")
        pairs.append((m1, m2))
    return pairs


def sensor_half_size(cfg: MirrorPairConfig, n_pairs: int = 8) -> float:
    prof = pair_profile(cfg)
    return float(prof.B[0]) / math.cos(math.pi / n_pairs) * 1.02


def default_real_camera(cfg: MirrorPairConfig, focal: float, n_pairs: int = 8,
                        model: str = "orthographic") -> CameraPose:
    """Downward-looking physical camera whose sensor covers every M1 aperture.

    ``focal`` is pixels per world unit for the orthographic model. For the
    pinhole model the focal length is chosen to give the same pitch at the
    height of M1's upper edge.
    """
    prof = pair_profile(cfg)
    half = sensor_half_size(cfg, n_pairs)
    n = int(math.ceil(2.0 * half * focal))
    z_cam = prof.top + 0.1 * cfg.h1
    R = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    center = np.array([0.0, 0.0, z_cam])
    if model == "orthographic":
        k = Intrinsics.centered("orthographic", focal, n)
    else:
        depth = z_cam - prof.A[1]
        k = Intrinsics.centered("pinhole", focal * depth, n)
    return CameraPose(R, -R @ center, k)


@dataclass(eq=False)
class VirtualCameraRig:
    cameras: list  # re-projected, zero-roll virtual cameras
    ring_radius: float
    ring_height: float
    azimuths: np.ndarray
    unfolded: list = field(default_factory=list)  # raw unfolded camera per pair
    mirrors: list = field(default_factory=list)
    real_camera: CameraPose | None = None
    lens: MirrorPairConfig | None = None

    @property
    def intrinsics(self) -> Intrinsics:
        return self.cameras[0].intrinsics

    def __len__(self):
        return len(self.cameras)

    def ring_pose(self, azimuth: float, intrinsics: Intrinsics | None = None) -> CameraPose:
        """Camera on the same ring at an arbitrary azimuth, looking at the center."""
        base = self.cameras[0]
        Q = rotation_z(azimuth - float(self.azimuths[0]))
        pose = rotate_pose(base, Q)
        return pose if intrinsics is None else pose.with_intrinsics(intrinsics)

    def to_dict(self) -> dict:
        return {
            "version": RIG_SCHEMA_VERSION,
            "model": self.intrinsics.model,
            "intrinsics": self.intrinsics.to_dict(),
            "ring_radius": self.ring_radius,
            "ring_height": self.ring_height,
            "cameras": [c.to_dict(f"view_{k}") | {"azimuth_deg": math.degrees(a)}
                        for k, (c, a) in enumerate(zip(self.cameras, self.azimuths))],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VirtualCameraRig":
        if d.get("version") != RIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported rig schema version {d.get('version')}")
        k = Intrinsics.from_dict(d["intrinsics"])
        cams = [CameraPose.from_dict(c, k) for c in d["cameras"]]
        az = np.array([math.radians(c.get("azimuth_deg", 0.0)) for c in d["cameras"]])
        return cls(cams, float(d["ring_radius"]), float(d["ring_height"]), az)


def build_rig(cfg: MirrorPairConfig, n_pairs: int = 8, real_camera: CameraPose | None = None,
              resolution: int = 800, footprint: float | None = None,
              azimuth0: float = 0.0) -> VirtualCameraRig:
    """Unfold every mirror pair into a virtual camera and re-project to zero roll.

    ``footprint`` is the world width covered by each virtual image; it sets the
    shared pixel pitch, and the physical camera gets the same pitch.
    """
    require_valid(cfg)
    if n_pairs < 3:
        raise ValueError("need at least three mirror pairs")
    prof = pair_profile(cfg)
    w = float(prof.B[0] - prof.A[0])
    if footprint is None:
        footprint = 1.05 * w
    focal = resolution / footprint
    mirrors = place_mirrors(cfg, n_pairs, azimuth0)
    if real_camera is None:
        real_camera = default_real_camera(cfg, focal, n_pairs)
    model = real_camera.intrinsics.model
    if model == "orthographic":
        shared = Intrinsics.centered(model, focal, resolution)
    else:
        shared = Intrinsics.centered(model, real_camera.intrinsics.focal, resolution)

    cameras, unfolded, azimuths = [], [], []
    r_mid = float(prof.A[0] + w / 2.0)
    z_cam = float(real_camera.center[2])
    for k, (m1, m2) in enumerate(mirrors):
        phi = azimuth0 + 2.0 * math.pi * k / n_pairs
        raw = reflect_pose(reflect_pose(real_camera, m1), m2)
        unfolded.append(raw)
        if model == "orthographic":
            # sub-image center, lifted to the camera plane and unfolded
            p = np.array([r_mid * math.cos(phi), r_mid * math.sin(phi), z_cam])
            p = m2.reflect_points(m1.reflect_points(p))
            cameras.append(pose_from_axis(p, raw.axis, shared))
        else:
            cameras.append(look_at(raw.center, np.zeros(3), shared))
        azimuths.append(phi)
    c0 = cameras[0].center
    return VirtualCameraRig(cameras, float(np.hypot(c0[0], c0[1])), float(c0[2]),
                            np.array(azimuths), unfolded, mirrors, real_camera, cfg)


def ring_poses(rig: VirtualCameraRig, count: int, offset: float | None = None,
               intrinsics: Intrinsics | None = None) -> list:
    """Held-out poses on the rig's ring, evenly spaced.

    The default offset puts them half a step away from the first camera.
    """
    step = 2.0 * math.pi / count
    if offset is None:
        offset = step / 2.0
    base = float(rig.azimuths[0])
    return [rig.ring_pose(base + offset + i * step, intrinsics) for i in range(count)]


# -- image warping -----------------------------------------------------------------


def _source_coords(src: CameraPose, dst: CameraPose, jj=None, ii=None):
    """Source pixel coordinates for destination positions, plus a depth map.

    Defaults to the destination pixel centers.
    """
    ks, kd = src.intrinsics, dst.intrinsics
    if ks.model != kd.model:
        raise GeometryMismatch("cannot warp between different camera models")
    if jj is None:
        jj, ii = np.meshgrid(np.arange(kd.width, dtype=float), np.arange(kd.height, dtype=float))
    if kd.model == "orthographic":
        if np.linalg.norm(np.cross(src.axis, dst.axis)) > 1e-9 or src.axis @ dst.axis < 0:
            raise GeometryMismatch("orthographic warp needs parallel viewing directions")
        origins, _, _ = dst.rays(jj, ii)
        us, vs, _ = src.project(origins)
        shift = float(dst.axis @ (src.center - dst.center))
        return us, vs, ("shift", shift)
    scale = max(1.0, float(np.linalg.norm(src.center)))
    if np.linalg.norm(src.center - dst.center) > 1e-9 * scale:
        raise GeometryMismatch("pinhole warp needs a shared camera center")
    local = np.stack([(jj - kd.cx) / kd.focal, (ii - kd.cy) / kd.focal, np.ones_like(jj)], -1)
    world = local @ dst.R  # axial component along dst axis is 1
    cam_s = world @ src.R.T
    zs = cam_s[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        us = ks.focal * cam_s[..., 0] / zs + ks.cx
        vs = ks.focal * cam_s[..., 1] / zs + ks.cy
    us = np.where(zs > 0, us, np.nan)
    vs = np.where(zs > 0, vs, np.nan)
    return us, vs, ("ratio", zs)


def _bilinear(color, valid, us, vs):
    """Validity-aware bilinear lookup; returns (sum of weighted colors, weight sum)."""
    H, W = valid.shape
    finite = np.isfinite(us) & np.isfinite(vs)
    us_f = np.where(finite, us, -10.0)
    vs_f = np.where(finite, vs, -10.0)
    j0 = np.floor(us_f).astype(np.int64)
    i0 = np.floor(vs_f).astype(np.int64)
    fx = us_f - j0
    fy = vs_f - i0
    acc = np.zeros(us.shape + (3,))
    wsum = np.zeros(us.shape)
    for di, dj, wgt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                        (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        ii = i0 + di
        jj = j0 + dj
        ok = finite & (ii >= 0) & (ii < H) & (jj >= 0) & (jj < W)
        iic = np.clip(ii, 0, H - 1)
        jjc = np.clip(jj, 0, W - 1)
        ok &= valid[iic, jjc]
        wk = np.where(ok, wgt, 0.0)
        acc += wk[..., None] * color[iic, jjc]
        wsum += wk
    return acc, wsum


def reproject_view(view, src: CameraPose, dst: CameraPose, samples: int = 1):
    """Warp a rendered view between two cameras that see along the same rays.

    Colors are sampled bilinearly, averaged over ``samples x samples``
    positions inside each destination pixel. A destination pixel is valid only
    when every sample has its full bilinear support on valid source pixels.
    Masks and depth use the source pixel nearest to the destination pixel center.
    """
    from .imaging_io import BACKGROUND_COLOR
    from .raysim import RenderedView

    us, vs, depth_map = _source_coords(src, dst)
    H, W = view.validity.shape
    finite = np.isfinite(us) & np.isfinite(vs)
    jn = np.rint(np.where(finite, us, -10.0)).astype(np.int64)
    in_n = np.rint(np.where(finite, vs, -10.0)).astype(np.int64)
    inside = finite & (jn >= 0) & (jn < W) & (in_n >= 0) & (in_n < H)
    jc = np.clip(jn, 0, W - 1)
    ic = np.clip(in_n, 0, H - 1)
    validity = inside & view.validity[ic, jc]
    silhouette = validity & view.silhouette[ic, jc]

    if samples == 1:
        acc, wsum = _bilinear(view.color, view.validity, us, vs)
        full = wsum > 1.0 - 1e-9
    else:
        u, v = dst.pixel_grid(samples)
        su, sv, _ = _source_coords(src, dst, u, v)
        acc, wsum = _bilinear(view.color, view.validity, su, sv)
        full = np.all(wsum > 1.0 - 1e-9, axis=2)
        acc, wsum = acc.sum(axis=2), wsum.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        color = acc / wsum[..., None]
    # a partial footprint would bias edge pixels toward whatever samples survive
    validity &= full
    silhouette &= validity
    color = np.where(validity[..., None], color, BACKGROUND_COLOR)

    src_depth = view.depth[ic, jc]
    kind, value = depth_map
    with np.errstate(invalid="ignore", divide="ignore"):
        if kind == "shift":
            depth = src_depth + value
        else:
            depth = src_depth / value
    depth = np.where(silhouette, depth, np.inf)
    return RenderedView(color=color.astype(view.color.dtype), depth=depth,
                        silhouette=silhouette, validity=validity)
