"""Projection of 3-D Gaussians to the image plane and differentiable compositing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import BehindCamera
from ..unfolding import CameraPose
from .gaussians import GaussianCloud, rotmat_quat_jacobian

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0


@dataclass(frozen=True)
class RenderSettings:
    alpha_min: float = ALPHA_MIN  # 0 disables culling (exact gradients everywhere)
    alpha_max: float = ALPHA_MAX
    blur: float = 0.0  # isotropic screen-space variance added to every footprint, px^2
    near: float = 1e-6  # Gaussians closer than this are dropped


@dataclass(eq=False)
class Projection:
    means2d: np.ndarray  # (N, 2) pixel coordinates
    cov2d: np.ndarray  # (N, 2, 2) including blur
    conics: np.ndarray  # (N, 3) a, b, c of the inverse covariance
    depths: np.ndarray  # (N,) camera-axis depth of the centers
    visible: np.ndarray  # (N,) bool
    # cached for the backward pass
    cam_points: np.ndarray
    J: np.ndarray  # (N, 2, 3)
    M: np.ndarray  # (N, 2, 3) = J W
    cov3d: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray


def _jacobian(camera: CameraPose, pc: np.ndarray) -> np.ndarray:
    k = camera.intrinsics
    n = len(pc)
    J = np.zeros((n, 2, 3))
    if k.model == "orthographic":
        J[:, 0, 0] = k.focal
        J[:, 1, 1] = k.focal
    else:
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        J[:, 0, 0] = k.focal / z
        J[:, 0, 2] = -k.focal * x / z ** 2
        J[:, 1, 1] = k.focal / z
        J[:, 1, 2] = -k.focal * y / z ** 2
    return J


def project(cloud: GaussianCloud, camera: CameraPose, settings: RenderSettings = RenderSettings()) -> Projection:
    """Screen-space means, covariances ``J W Sigma W^T J^T`` and center depths."""
    k = camera.intrinsics
    pc = cloud.means @ camera.R.T + camera.t
    depths = pc[:, 2]
    visible = depths > settings.near
    R = cloud.rotations()
    s = cloud.scales
    Mq = R * s[:, None, :]
    cov3d = Mq @ np.transpose(Mq, (0, 2, 1))
    safe = np.where(visible[:, None], pc, np.array([0.0, 0.0, 1.0]))
    J = _jacobian(camera, safe)
    M = J @ camera.R
    cov2d = M @ cov3d @ np.transpose(M, (0, 2, 1))
    cov2d[:, 0, 0] += settings.blur
    cov2d[:, 1, 1] += settings.blur
    if k.model == "orthographic":
        means2d = k.focal * pc[:, :2] + np.array([k.cx, k.cy])
    else:
        means2d = k.focal * safe[:, :2] / safe[:, 2:3] + np.array([k.cx, k.cy])
    A, B, C = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = A * C - B * B
    visible &= det > 0
    det = np.where(det > 0, det, 1.0)
    conics = np.column_stack([C / det, -B / det, A / det])
    return Projection(means2d, cov2d, conics, depths, visible, pc, J, M, cov3d, R, s)


def project_gaussian(cloud: GaussianCloud, index: int, camera: CameraPose):
    """Mean, 2x2 covariance and depth of one Gaussian; raises when it is behind the camera."""
    sub = GaussianCloud(cloud.means[index:index + 1], cloud.quats[index:index + 1],
                        cloud.log_scales[index:index + 1], cloud.opacity_logits[index:index + 1],
                        cloud.colors[index:index + 1])
    p = project(sub, camera, RenderSettings(near=0.0))
    if not p.depths[0] > 0:
        raise BehindCamera(f"Gaussian {index} has depth {p.depths[0]:.6g}")
    return p.means2d[0], p.cov2d[0], float(p.depths[0])


def _bboxes(proj: Projection, opac: np.ndarray, width: int, height: int, alpha_min: float):
    """Integer pixel boxes outside which a Gaussian's alpha is below ``alpha_min``."""
    n = len(opac)
    bbox = np.empty((n, 4), dtype=np.int64)
    if alpha_min <= 0:
        bbox[:] = [0, width - 1, 0, height - 1]
        return bbox
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 2.0 * np.log(opac / alpha_min)
    live = r2 > 0
    r2 = np.where(live, r2, 0.0)
    ex = np.sqrt(r2 * proj.cov2d[:, 0, 0])
    ey = np.sqrt(r2 * proj.cov2d[:, 1, 1])
    mx, my = proj.means2d[:, 0], proj.means2d[:, 1]
    big = 1 << 40
    bbox[:, 0] = np.clip(np.floor(mx - ex) - 1, -big, big)
    bbox[:, 1] = np.clip(np.ceil(mx + ex) + 1, -big, big)
    bbox[:, 2] = np.clip(np.floor(my - ey) - 1, -big, big)
    bbox[:, 3] = np.clip(np.ceil(my + ey) + 1, -big, big)
    bbox[~live] = [1, 0, 1, 0]  # empty
    return bbox


@dataclass(eq=False)
class RenderOutput:
    color: np.ndarray  # (H, W, 3), no background term
    depth: np.ndarray  # (H, W), sum of d_i alpha_i T_i
    alpha: np.ndarray  # (H, W), 1 - final transmittance
    projection: Projection
    order: np.ndarray
    bbox: np.ndarray
    settings: RenderSettings

    def composite(self, background) -> np.ndarray:
        return self.color + (1.0 - self.alpha)[..., None] * np.asarray(background, dtype=float)


def render(cloud: GaussianCloud, camera: CameraPose, settings: RenderSettings = RenderSettings(),
           backend=None) -> RenderOutput:
    """Color, depth and alpha images composited front to back by center depth."""
    kern = backend or kernels
    k = camera.intrinsics
    proj = project(cloud, camera, settings)
    opac = cloud.opacities
    idx = np.flatnonzero(proj.visible)
    order = idx[np.argsort(proj.depths[idx], kind="stable")].astype(np.int64)
    bbox = _bboxes(proj, opac, k.width, k.height, settings.alpha_min)
    color, depth, alpha = kern.rasterize_forward(
        k.height, k.width, np.ascontiguousarray(proj.means2d), np.ascontiguousarray(proj.conics),
        np.ascontiguousarray(opac), np.ascontiguousarray(cloud.colors),
        np.ascontiguousarray(proj.depths), order, bbox,
        float(settings.alpha_min), float(settings.alpha_max))
    return RenderOutput(color, depth, alpha, proj, order, bbox, settings)


def render_backward(cloud: GaussianCloud, camera: CameraPose, out: RenderOutput,
                    d_color, d_depth, d_alpha=None, backend=None) -> dict:
    """Gradients of a loss with respect to every cloud parameter, given image gradients."""
    kern = backend or kernels
    k = camera.intrinsics
    proj = out.projection
    opac = cloud.opacities
    if d_alpha is None:
        d_alpha = np.zeros((k.height, k.width))
    g_m2, g_con, g_op, g_col, g_dep = kern.rasterize_backward(
        k.height, k.width, np.ascontiguousarray(proj.means2d), np.ascontiguousarray(proj.conics),
        np.ascontiguousarray(opac), np.ascontiguousarray(cloud.colors),
        np.ascontiguousarray(proj.depths), out.order, out.bbox,
        float(out.settings.alpha_min), float(out.settings.alpha_max),
        np.ascontiguousarray(d_color, dtype=float), np.ascontiguousarray(d_depth, dtype=float),
        np.ascontiguousarray(d_alpha, dtype=float))
    vis = proj.visible
    g_m2 = np.where(vis[:, None], g_m2, 0.0)
    g_con = np.where(vis[:, None], g_con, 0.0)

    # conic -> 2-D covariance: dL/dS' = -Q G Q with G the symmetric conic gradient
    a, b, c = proj.conics[:, 0], proj.conics[:, 1], proj.conics[:, 2]
    Q = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)
    G = np.stack([np.stack([g_con[:, 0], 0.5 * g_con[:, 1]], -1),
                  np.stack([0.5 * g_con[:, 1], g_con[:, 2]], -1)], -2)
    g_cov2d = -Q @ G @ Q

    M = proj.M
    g_cov3d = np.transpose(M, (0, 2, 1)) @ g_cov2d @ M
    g_M = 2.0 * g_cov2d @ M @ proj.cov3d

    # camera-space point gradient from the screen mean, the depth and (pinhole) J
    g_pc = np.zeros((len(cloud), 3))
    g_pc[:, 2] += g_dep
    if k.model == "orthographic":
        g_pc[:, 0] += k.focal * g_m2[:, 0]
        g_pc[:, 1] += k.focal * g_m2[:, 1]
    else:
        pc = np.where(vis[:, None], proj.cam_points, np.array([0.0, 0.0, 1.0]))
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        f = k.focal
        g_pc[:, 0] += f / z * g_m2[:, 0]
        g_pc[:, 1] += f / z * g_m2[:, 1]
        g_pc[:, 2] += -f * x / z ** 2 * g_m2[:, 0] - f * y / z ** 2 * g_m2[:, 1]
        g_J = g_M @ camera.R.T
        g_pc[:, 0] += -f / z ** 2 * g_J[:, 0, 2]
        g_pc[:, 1] += -f / z ** 2 * g_J[:, 1, 2]
        g_pc[:, 2] += (-f / z ** 2 * (g_J[:, 0, 0] + g_J[:, 1, 1])
                       + 2.0 * f * x / z ** 3 * g_J[:, 0, 2] + 2.0 * f * y / z ** 3 * g_J[:, 1, 2])
    g_pc = np.where(vis[:, None], g_pc, 0.0)
    g_means = g_pc @ camera.R

    # Sigma = (R S)(R S)^T
    g_cov3d = 0.5 * (g_cov3d + np.transpose(g_cov3d, (0, 2, 1)))
    Rq = proj.rotations
    s = proj.scales
    g_Mq = 2.0 * g_cov3d @ (Rq * s[:, None, :])
    g_s = np.sum(g_Mq * Rq, axis=1)
    g_R = g_Mq * s[:, None, :]
    qn = cloud.unit_quats
    dR = rotmat_quat_jacobian(qn)
    g_qn = np.einsum("nkij,nij->nk", dR, g_R)
    norm = np.linalg.norm(cloud.quats, axis=1, keepdims=True)
    g_q = (g_qn - qn * np.sum(qn * g_qn, axis=1, keepdims=True)) / norm
    g_ls = g_s * np.exp(cloud.log_scales)
    g_logit = g_op * opac * (1.0 - opac)
    return {"means": g_means, "quats": np.where(vis[:, None], g_q, 0.0),
            "log_scales": np.where(vis[:, None], g_ls, 0.0),
            "opacity_logits": np.where(vis, g_logit, 0.0),
            "colors": np.where(vis[:, None], g_col, 0.0)}
