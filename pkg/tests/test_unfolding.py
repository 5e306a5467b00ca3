import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.ndimage import gaussian_filter

from catoptra.errors import ConditionViolation, GeometryMismatch
from catoptra.lens import apex_angle, pair_profile
from catoptra.metrics import psnr
from catoptra.raysim import OK, RenderedView, trace_ray
from catoptra.unfolding import (CameraPose, Intrinsics, MirrorPlane, VirtualCameraRig, build_rig,
                                look_at, place_mirrors, reflect_pose, reproject_view, ring_poses,
                                rotation_z)

from conftest import margined, random_config

K = Intrinsics.centered("orthographic", 64.0, 96)


def plane_z0():
    return MirrorPlane.through([0, 0, 1], [[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]])


def axis_angle(axis, angle):
    a = np.asarray(axis, float) / np.linalg.norm(axis)
    Kx = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle) * Kx + (1 - math.cos(angle)) * Kx @ Kx


def view_of(img, sil=None):
    h, w = img.shape[:2]
    sil = np.ones((h, w), bool) if sil is None else sil
    return RenderedView(img, np.where(sil, 1.0, np.inf), sil, np.ones((h, w), bool))


def roll(pose, angle):
    Q = rotation_z(angle)  # about the camera's own optical axis
    return CameraPose(Q @ pose.R, Q @ pose.t, pose.intrinsics)


def test_reflect_identity_pose_on_plane():
    pose = CameraPose(np.eye(3), np.zeros(3), K)
    out = reflect_pose(pose, plane_z0())
    np.testing.assert_allclose(out.center, 0.0, atol=1e-15)
    np.testing.assert_allclose(out.axis, [0, 0, -1])
    assert out.handedness == -1


def test_reflect_pose_mirror_symmetry():
    pose = CameraPose(np.eye(3), -np.array([0, 0, 2.0]), K)
    np.testing.assert_allclose(reflect_pose(pose, plane_z0()).center, [0, 0, -2.0])


@given(st.floats(0.1, 3.0), st.floats(-1, 1), st.floats(-1, 1))
def test_double_reflection_is_rotation_by_twice_dihedral(phi, px, py):
    # planes through the z axis at angles 0 and phi
    n1 = np.array([0.0, 1.0, 0.0])
    n2 = np.array([-math.sin(phi), math.cos(phi), 0.0])
    sq = lambda n: np.cross(n, [0, 0, 1])
    m1 = MirrorPlane.through(n1, [[0, 0, -1], sq(n1) + [0, 0, -1], sq(n1) + [0, 0, 1], [0, 0, 1]])
    m2 = MirrorPlane.through(n2, [[0, 0, -1], sq(n2) + [0, 0, -1], sq(n2) + [0, 0, 1], [0, 0, 1]])
    pose = look_at([px + 2, py, 0.3], [0, 0, 0], K)
    out = reflect_pose(reflect_pose(pose, m1), m2)
    Q = axis_angle([0, 0, 1], 2 * phi)
    np.testing.assert_allclose(out.R, pose.R @ Q.T, atol=1e-12)
    np.testing.assert_allclose(out.center, Q @ pose.center, atol=1e-12)
    assert np.linalg.det(out.R) == pytest.approx(1.0, abs=1e-12)


def test_mirror_plane_validation():
    with pytest.raises(ValueError):
        MirrorPlane(np.array([0, 0, 2.0]), 0.0, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        MirrorPlane(np.array([0, 0, 1.0]), 0.0, np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0.1], [0, 1, 0]]))


def test_rig_design_b_axes_at_fifty_degrees(small_rig):
    for cam in small_rig.cameras:
        tilt = math.degrees(math.acos(-cam.axis[2]))
        assert tilt == pytest.approx(50.0, abs=1e-9)
        assert np.linalg.det(cam.R) == pytest.approx(1.0, abs=1e-12)


def test_rig_axes_meet_vertical_axis(small_rig):
    for cam in small_rig.cameras:
        c, a = cam.center, cam.axis
        # closest approach of the optical axis to the z axis
        s = -(c[0] * a[0] + c[1] * a[1]) / (a[0] ** 2 + a[1] ** 2)
        p = c + s * a
        assert math.hypot(p[0], p[1]) < 1e-9
        assert abs(p[2]) < 1e-9  # and they cross at the volume center


def test_rig_octagonal_symmetry(small_rig):
    Q = rotation_z(math.pi / 4)
    for k in range(8):
        a, b = small_rig.cameras[k], small_rig.cameras[(k + 1) % 8]
        np.testing.assert_allclose(a.R @ Q.T, b.R, atol=1e-12)
        np.testing.assert_allclose(Q @ a.center, b.center, atol=1e-12)


def test_raw_unfolded_poses_are_proper(small_rig):
    for raw in small_rig.unfolded:
        assert raw.handedness == 1
        np.testing.assert_allclose(raw.R @ raw.R.T, np.eye(3), atol=1e-12)


def test_four_pair_variant_spacing(design_b):
    rig = build_rig(design_b, n_pairs=4, resolution=16)
    az = np.degrees(np.arctan2([c.center[1] for c in rig.cameras], [c.center[0] for c in rig.cameras]))
    np.testing.assert_allclose(np.diff(np.unwrap(np.radians(az))), math.pi / 2, atol=1e-12)


def test_rig_equivariant_under_assembly_rotation(design_b):
    r0 = build_rig(design_b, resolution=16)
    r45 = build_rig(design_b, resolution=16, azimuth0=math.pi / 4)
    Q = rotation_z(math.pi / 4)
    for a, b in zip(r0.cameras, r45.cameras):
        np.testing.assert_allclose(Q @ a.center, b.center, atol=1e-12)
        np.testing.assert_allclose(Q @ a.axis, b.axis, atol=1e-12)


def test_rig_requires_valid_lens(design_b):
    with pytest.raises(ConditionViolation):
        build_rig(design_b.replace(h2=0.01), resolution=8)
    with pytest.raises(ValueError):
        build_rig(design_b, n_pairs=2, resolution=8)


def test_unfolded_central_ray_matches_trace():
    rng = np.random.default_rng(3)
    for _ in range(100):
        cfg = random_config(rng)
        rig = build_rig(cfg, resolution=8)
        prof = pair_profile(cfg)
        r_mid = 0.5 * (prof.A[0] + prof.B[0])
        z = rig.real_camera.center[2]
        scale = cfg.h1
        for k in (0, 3):
            phi = rig.azimuths[k]
            rec = trace_ray([r_mid * math.cos(phi), r_mid * math.sin(phi), z], [0, 0, -1], rig)
            assert rec.status[0] == OK
            cam = rig.cameras[k]
            v = rec.exit_origin[0] - cam.center
            dist = np.linalg.norm(v - (v @ cam.axis) * cam.axis)
            assert dist < 1e-9 * scale
            np.testing.assert_allclose(rec.exit_dir[0], cam.axis, atol=1e-9)
            assert math.acos(-cam.axis[2]) == pytest.approx(apex_angle(cfg), abs=1e-9)


def test_ring_poses_spacing(small_rig):
    poses = ring_poses(small_rig, 24)
    az = np.unwrap([math.atan2(p.center[1], p.center[0]) for p in poses])
    np.testing.assert_allclose(np.degrees(np.diff(az)), 15.0, atol=1e-9)
    first = math.degrees(az[0] - small_rig.azimuths[0])
    assert first == pytest.approx(7.5, abs=1e-9)
    for p in poses:
        assert p.center[2] == pytest.approx(small_rig.ring_height)
        assert math.hypot(*p.center[:2]) == pytest.approx(small_rig.ring_radius)


def test_rig_json_round_trip(small_rig):
    back = VirtualCameraRig.from_dict(json.loads(json.dumps(small_rig.to_dict())))
    for a, b in zip(small_rig.cameras, back.cameras):
        np.testing.assert_allclose(a.R, b.R, rtol=0, atol=1e-15)
        np.testing.assert_allclose(a.t, b.t, rtol=0, atol=1e-15)
    assert back.intrinsics == small_rig.intrinsics


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics.centered("fisheye", 1.0, 8)
    with pytest.raises(ValueError):
        Intrinsics.centered("pinhole", 0.0, 8)


def test_camera_project_rays_round_trip():
    for model, f in (("orthographic", 40.0), ("pinhole", 60.0)):
        cam = look_at([0.3, -2.0, 1.0], [0, 0, 0], Intrinsics.centered(model, f, 32))
        o, d, axial = cam.rays(np.array([3.0, 17.5]), np.array([5.0, 30.0]))
        u, v, depth = cam.project(o + 1.7 * d)
        np.testing.assert_allclose(u, [3.0, 17.5], atol=1e-10)
        np.testing.assert_allclose(v, [5.0, 30.0], atol=1e-10)
        np.testing.assert_allclose(depth - cam.project(o)[2], 1.7 * axial, atol=1e-12)


# -- reprojection -----------------------------------------------------------------------


def smooth_checker(n=96, square=12, sigma=2.0):
    jj, ii = np.meshgrid(np.arange(n), np.arange(n))
    c = gaussian_filter(((jj // square + ii // square) % 2).astype(float), sigma)
    return np.stack([c, 1 - c, np.full_like(c, 0.5)], -1)


def test_reproject_identity():
    src = look_at([0, -2, 1], [0, 0, 0], K)
    img = smooth_checker()
    out = reproject_view(view_of(img), src, src)
    np.testing.assert_allclose(out.color, img, atol=1e-12)
    assert out.validity.all()


def test_reproject_needs_full_footprint():
    # a destination pixel whose samples reach an invalid source pixel is dropped,
    # never averaged over the samples that happen to survive
    src = look_at([0, -2, 1], [0, 0, 0], K)
    img = smooth_checker()
    view = view_of(img)
    view.validity[:, 40] = False
    # one centered sample sits exactly on its source pixel; 3x3 samples spill into both neighbors
    for samples, lo, hi in ((1, 40, 41), (3, 39, 42)):
        out = reproject_view(view, src, src, samples)
        assert not out.validity[:, lo:hi].any()
        assert out.validity[1:-1, 1:lo].all() and out.validity[1:-1, hi:-1].all()
    out = reproject_view(view, src, src, 1)
    np.testing.assert_allclose(out.color[:, 41], img[:, 41], atol=1e-12)


def test_reproject_quarter_roll_rotates_image():
    src = look_at([0, -2, 1], [0, 0, 0], K)
    img = smooth_checker()
    yy, xx = np.mgrid[:96, :96]
    sil = (xx - 30) ** 2 + (yy - 50) ** 2 < 20 ** 2
    out = reproject_view(view_of(img, sil), src, roll(src, math.pi / 2))
    assert abs(int(out.silhouette.sum()) - int(sil.sum())) <= 0.005 * sil.sum()
    # every output pixel comes from exactly one source pixel: values are a permutation
    np.testing.assert_allclose(np.sort(out.color.ravel()), np.sort(img.ravel()), atol=1e-12)


def test_reproject_band_limited_checker_round_trip():
    src = look_at([0, -2, 1], [0, 0, 0], K)
    dst = roll(src, math.radians(30))
    img = smooth_checker()
    fwd = reproject_view(view_of(img), src, dst)
    back = reproject_view(fwd, dst, src)
    inner = np.zeros((96, 96), bool)
    inner[24:72, 24:72] = True
    assert psnr(back.color, img, inner) > 40.0


def test_reproject_pinhole_rotation_round_trip():
    k = Intrinsics.centered("pinhole", 90.0, 96)
    src = look_at([0, -2, 1], [0, 0, 0], k)
    dst = look_at([0, -2, 1], [0.1, 0, 0.05], k)
    img = smooth_checker(sigma=2.5)
    back = reproject_view(reproject_view(view_of(img), src, dst), dst, src)
    inner = np.zeros((96, 96), bool)
    inner[28:68, 28:68] = True
    assert psnr(back.color, img, inner) > 40.0


def test_reproject_rejects_incompatible_cameras():
    src = look_at([0, -2, 1], [0, 0, 0], K)
    with pytest.raises(GeometryMismatch):
        reproject_view(view_of(smooth_checker()), src, look_at([0, -2, 1], [0.5, 0, 0], K))
    pin = Intrinsics.centered("pinhole", 90.0, 96)
    with pytest.raises(GeometryMismatch):
        reproject_view(view_of(smooth_checker()), src, src.with_intrinsics(pin))
    with pytest.raises(GeometryMismatch):
        a = look_at([0, -2, 1], [0, 0, 0], pin)
        reproject_view(view_of(smooth_checker()), a, look_at([0, -2.5, 1], [0, 0, 0], pin))


def test_reproject_preserves_convex_component_count():
    from scipy.ndimage import label

    src = look_at([0, -2, 1], [0, 0, 0], K)
    yy, xx = np.mgrid[:96, :96]
    sil = ((xx - 30) ** 2 + (yy - 50) ** 2 < 12 ** 2) | ((xx - 65) ** 2 + (yy - 40) ** 2 < 9 ** 2)
    for a in (10, 45, 100):
        out = reproject_view(view_of(smooth_checker(), sil), src, roll(src, math.radians(a)))
        assert label(out.silhouette)[1] == 2


def test_place_mirrors_tile_pyramids(design_b):
    pairs = place_mirrors(design_b)
    assert len(pairs) == 8
    for m1, m2 in pairs:
        assert m1.normal[2] > 0 and m2.normal[2] < 0
