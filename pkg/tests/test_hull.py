import math

import numpy as np
import pytest
from scipy import ndimage

from catoptra.errors import EmptyHull, ShapeMismatch
from catoptra.hull import (VisualHull, carve, coarsen, grid_for_bounds, hull_depth, hull_to_point_cloud,
                           read_hull, surface_mask, write_hull)
from catoptra.pipeline import reference_lens
from catoptra.raysim import RenderedView, render_virtual_views
from catoptra.scene import sphere_scene
from catoptra.unfolding import build_rig

BOUNDS = (np.full(3, -0.15), np.full(3, 0.15))
# 8-cylinder intersection for r = 0.1 around the reference ring axes, from a
# 2**20-point Sobol estimate over the bounds cube
CYLINDERS_VOLUME_R01 = 0.0043926858901977535


@pytest.fixture(scope="module")
def sphere_setup():
    rig = build_rig(reference_lens(), resolution=128)
    refs, _, _ = render_virtual_views(rig, sphere_scene(0.1), held_out=0)
    hull = carve(refs, rig.cameras, BOUNDS, 96)
    return rig, refs, hull


def test_grid_for_bounds_is_cubic():
    origin, voxel, dims = grid_for_bounds([0, 0, 0], [1.0, 0.5, 0.25], 64)
    assert voxel == pytest.approx(1 / 64)
    assert dims == (64, 32, 16)
    np.testing.assert_allclose(origin, 0.0, atol=1e-12)


def test_sphere_hull_contains_surface(sphere_setup):
    rig, refs, hull = sphere_setup
    pts = sphere_scene(0.1).surface_samples(5000, np.random.default_rng(1))
    assert hull.near_occupied(pts).all()


def test_sphere_hull_volume_against_cylinders():
    rig = build_rig(reference_lens(), resolution=256)
    refs, _, _ = render_virtual_views(rig, sphere_scene(0.1), held_out=0)
    hull = carve(refs, rig.cameras, BOUNDS, 256)
    assert hull.volume == pytest.approx(CYLINDERS_VOLUME_R01, rel=0.08)
    # and it is a superset, so never much below the oracle
    assert hull.volume >= 0.98 * CYLINDERS_VOLUME_R01


def test_cylinder_oracle_is_frozen_correctly(sphere_setup):
    rig = sphere_setup[0]
    from scipy.stats import qmc

    s = qmc.Sobol(3, seed=0).random_base2(16) * 0.3 - 0.15
    inside = np.ones(len(s), bool)
    for cam in rig.cameras:
        a = cam.axis
        inside &= np.linalg.norm(s - np.outer(s @ a, a), axis=1) <= 0.1
    assert inside.mean() * 0.3 ** 3 == pytest.approx(CYLINDERS_VOLUME_R01, rel=0.01)


def test_adding_views_never_grows_hull(sphere_setup):
    rig, refs, hull = sphere_setup
    fewer = carve(refs[:5], rig.cameras[:5], BOUNDS, 96)
    assert np.all(fewer.grid >= hull.grid)
    assert fewer.occupied > hull.occupied


def test_carving_is_order_independent(sphere_setup):
    rig, refs, hull = sphere_setup
    perm = np.random.default_rng(3).permutation(8)
    again = carve([refs[k] for k in perm], [rig.cameras[k] for k in perm], BOUNDS, 96)
    np.testing.assert_array_equal(again.grid, hull.grid)


def test_single_view_gives_prism(sphere_setup):
    rig, refs, _ = sphere_setup
    cam = rig.cameras[0]
    one = carve(refs[:1], [cam], BOUNDS, 48)
    # occupancy is exactly the dilated silhouette test of the one view
    c = one.centers()
    u, v, _ = cam.project(c)
    dist = ndimage.distance_transform_edt(~refs[0].silhouette)
    assert np.all(dist[np.rint(v).astype(int), np.rint(u).astype(int)] <= 1.0)
    allc = one.centers(np.argwhere(np.ones(one.dims, bool)))
    u, v, _ = cam.project(allc)
    inside = dist[np.rint(v).astype(int), np.rint(u).astype(int)] <= 1.0
    assert inside.sum() == one.occupied


def test_inconsistent_masks_raise(sphere_setup):
    rig, refs, _ = sphere_setup
    a = refs[0]
    sil = np.zeros_like(a.silhouette)
    sil[:5, :5] = True
    b = RenderedView(a.color, np.where(sil, 1.0, np.inf), sil, a.validity)
    with pytest.raises(EmptyHull):
        carve([a, b, refs[4]], [rig.cameras[0], rig.cameras[1], rig.cameras[4]], BOUNDS, 48)


def test_degenerate_inputs(sphere_setup):
    rig, refs, _ = sphere_setup
    blank = [RenderedView(v.color, np.full(v.shape, np.inf), np.zeros(v.shape, bool), v.validity)
             for v in refs]
    with pytest.raises(EmptyHull):
        carve(blank, rig.cameras, BOUNDS, 16)
    with pytest.raises(ValueError):
        grid_for_bounds(np.zeros(3), np.zeros(3), 16)


def test_shape_mismatch(sphere_setup):
    rig, refs, _ = sphere_setup
    with pytest.raises(ShapeMismatch):
        carve(refs[:2], rig.cameras[:1], BOUNDS, 16)


def test_hull_depth_at_center(sphere_setup):
    rig, refs, hull = sphere_setup
    axes = np.array([c.axis for c in rig.cameras])
    for k, cam in enumerate(rig.cameras):
        # along its own axis the cylinder intersection reaches r / sin(widest axis angle)
        sin_max = np.sqrt(1 - np.min(axes @ axes[k]) ** 2)
        u, v, dist = cam.project(np.zeros((1, 3)))
        d = hull_depth(hull, cam)
        col, row = int(np.rint(u[0])), int(np.rint(v[0]))
        tol = hull.voxel_size + 1.0 / cam.intrinsics.focal / sin_max
        assert d[row, col] == pytest.approx(dist[0] - 0.1 / sin_max, abs=tol)
        assert d[row, col] <= dist[0] - 0.1 + hull.voxel_size


def test_hull_depth_precedes_true_depth(sphere_setup):
    rig, refs, hull = sphere_setup
    for view, cam in zip(refs, rig.cameras):
        d = hull_depth(hull, cam)
        sil = view.silhouette
        assert np.all(d[sil] <= view.depth[sil] + hull.voxel_size)


def test_hull_depth_finite_matches_silhouette_band(sphere_setup):
    rig, refs, hull = sphere_setup
    for view, cam in zip(refs, rig.cameras):
        finite = np.isfinite(hull_depth(hull, cam))
        band = math.ceil(hull.voxel_size * cam.intrinsics.focal * math.sqrt(3)) + 1
        edge = ndimage.distance_transform_edt(view.silhouette) + ndimage.distance_transform_edt(~view.silhouette)
        assert np.all(edge[finite != view.silhouette] <= band)


def test_back_face_depth_is_behind_front(sphere_setup):
    rig, refs, hull = sphere_setup
    cam = rig.cameras[2]
    front = hull_depth(hull, cam)
    back = hull_depth(hull, cam, back=True)
    f = np.isfinite(front)
    np.testing.assert_array_equal(f, np.isfinite(back))
    assert np.all(back[f] >= front[f])


def test_solid_block_surface_voxels():
    g = np.ones((3, 3, 3), bool)
    assert surface_mask(g).sum() == 26
    hull = VisualHull(g, np.zeros(3), 1.0)
    pts, normals = hull_to_point_cloud(hull)
    assert len(pts) == 26
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0)
    # normals point away from the block center
    assert np.all(np.sum((pts - 1.5) * normals, axis=1) > 0)


def test_coarsen_or_blocks():
    g = np.zeros((5, 4, 4), bool)
    g[4, 0, 0] = True
    c = coarsen(g, 2)
    assert c.shape == (3, 2, 2)
    assert c[2, 0, 0] and c.sum() == 1


def _ball(radius_vox, n):
    x = np.arange(n) - (n - 1) / 2
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    return X ** 2 + Y ** 2 + Z ** 2 <= radius_vox ** 2


def test_point_count_scales_with_area():
    small = hull_to_point_cloud(VisualHull(_ball(12, 40), np.zeros(3), 1.0))[0]
    large = hull_to_point_cloud(VisualHull(_ball(24, 64), np.zeros(3), 1.0))[0]
    assert len(large) / len(small) == pytest.approx(4.0, rel=0.1)


def test_stride_two_quarter_points():
    hull = VisualHull(_ball(24, 64), np.zeros(3), 1.0)
    n1 = len(hull_to_point_cloud(hull)[0])
    n2 = len(hull_to_point_cloud(hull, stride=2)[0])
    assert n2 / n1 == pytest.approx(0.25, rel=0.15)


def test_empty_hull_point_cloud():
    with pytest.raises(EmptyHull):
        hull_to_point_cloud(VisualHull(np.zeros((2, 2, 2), bool), np.zeros(3), 1.0))


def test_hull_io_round_trip(tmp_path, sphere_setup):
    hull = sphere_setup[2]
    write_hull(tmp_path / "hull.raw", hull)
    again = read_hull(tmp_path / "hull.raw")
    np.testing.assert_array_equal(again.grid, hull.grid)
    np.testing.assert_array_equal(again.origin, hull.origin)
    assert again.voxel_size == hull.voxel_size
