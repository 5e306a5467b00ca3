import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from catoptra.errors import NoValidPixels, ShapeMismatch
from catoptra.splat.loss import (DepthPair, LossWeights, combined_loss, depth_loss, depth_weight,
                                 depth_weight_derivative, dssim_loss, l1_loss, loss_region)

W_ONE = 0.5378828427399902  # 2 / (1 + e)

deltas = st.floats(-50, 50, allow_nan=False)
temps = st.floats(0.01, 10)


def test_weight_examples():
    assert depth_weight(0.0) == 1.0
    assert depth_weight(1.0) == pytest.approx(W_ONE, rel=1e-15)
    assert depth_weight(1.0) == pytest.approx(2 / (1 + math.e), rel=1e-15)
    assert depth_weight(1.0, "flipped") == pytest.approx(2 - W_ONE, rel=1e-15)
    assert depth_weight(-800.0) == 2.0 and depth_weight(800.0) == 0.0
    np.testing.assert_allclose(depth_weight(np.array([1e3, -1e3])), [0.0, 2.0])


@given(deltas, temps, st.sampled_from(["as-printed", "flipped"]))
def test_weight_symmetry(d, tau, sign):
    assert depth_weight(d, sign, tau) + depth_weight(-d, sign, tau) == pytest.approx(2.0, abs=1e-12)


@given(deltas, deltas, temps)
def test_weight_monotone(a, b, tau):
    lo, hi = min(a, b), max(a, b)
    assert depth_weight(lo, "as-printed", tau) >= depth_weight(hi, "as-printed", tau)
    assert depth_weight(lo, "flipped", tau) <= depth_weight(hi, "flipped", tau)


@given(st.floats(-20, 20), temps)
def test_weight_derivative(d, tau):
    h = 1e-6 * tau
    fd = (depth_weight(d + h, temperature=tau) - depth_weight(d - h, temperature=tau)) / (2 * h)
    assert depth_weight_derivative(d, temperature=tau) == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_weight_rejects_bad_inputs():
    with pytest.raises(ValueError):
        depth_weight(0.0, temperature=0.0)
    with pytest.raises(ValueError):
        depth_weight(0.0, sign="sideways")


def test_depth_loss_examples():
    hull = np.full((4, 4), 2.0)
    assert depth_loss(DepthPair(hull.copy(), hull)) == 0.0
    assert depth_loss(DepthPair(hull + 1.0, hull)) == pytest.approx(W_ONE, rel=1e-15)
    assert depth_loss(DepthPair(hull - 1.0, hull)) > depth_loss(DepthPair(hull + 1.0, hull))
    assert depth_loss(DepthPair(hull - 1.0, hull)) == pytest.approx(2 - W_ONE, rel=1e-15)


def test_depth_loss_only_on_valid_pixels():
    hull = np.array([[1.0, np.inf], [1.0, 1.0]])
    rend = np.array([[1.0, 5.0], [np.inf, 2.0]])
    pair = DepthPair(rend, hull)
    np.testing.assert_array_equal(pair.valid, [[True, False], [False, True]])
    assert depth_loss(pair) == pytest.approx(0.5 * W_ONE)
    assert np.isnan(pair.residual[0, 1])
    with pytest.raises(NoValidPixels):
        depth_loss(DepthPair(np.full((2, 2), np.inf), hull))
    with pytest.raises(ShapeMismatch):
        DepthPair(np.zeros((2, 3)), hull)


def test_depth_loss_zero_iff_residuals_vanish():
    rng = np.random.default_rng(0)
    hull = rng.uniform(1, 2, (8, 8))
    hull[0] = np.inf
    rend = hull.copy()
    rend[1, 1] = np.inf
    assert depth_loss(DepthPair(rend, hull)) == 0.0
    # off-valid changes do not count
    rend[0] = 7.0
    assert depth_loss(DepthPair(rend, hull)) == 0.0
    rend[2, 2] += 1e-9
    assert depth_loss(DepthPair(rend, hull)) > 0.0


def test_depth_loss_gradient_zero_at_zero_residual():
    hull = np.full((3, 3), 1.0)
    _, g = depth_loss(DepthPair(hull.copy(), hull), grad=True)
    np.testing.assert_array_equal(g, 0.0)


def test_depth_loss_gradient_matches_fd():
    rng = np.random.default_rng(1)
    hull = rng.uniform(1, 2, (5, 5))
    rend = hull + rng.normal(0, 0.5, (5, 5))
    for sign in ("as-printed", "flipped"):
        _, g = depth_loss(DepthPair(rend, hull), sign, 0.3, grad=True)
        h = 1e-7
        for idx in [(0, 0), (2, 3), (4, 4)]:
            p, m = rend.copy(), rend.copy()
            p[idx] += h
            m[idx] -= h
            fd = (depth_loss(DepthPair(p, hull), sign, 0.3) - depth_loss(DepthPair(m, hull), sign, 0.3)) / (2 * h)
            assert g[idx] == pytest.approx(fd, rel=1e-6)


def test_weights_validation_and_defaults():
    w = LossWeights()
    assert (w.l1, w.dssim, w.depth) == (0.8, 0.2, 0.5)
    with pytest.raises(ValueError):
        LossWeights(depth=-0.1)


def test_l1_and_dssim_basics():
    rng = np.random.default_rng(2)
    a = rng.random((16, 16, 3))
    assert l1_loss(a, a) == 0.0
    assert dssim_loss(a, a) == pytest.approx(0.0, abs=1e-12)
    assert l1_loss(a, a + 0.25) == pytest.approx(0.25)
    m = np.zeros((16, 16), bool)
    with pytest.raises(NoValidPixels):
        l1_loss(a, a, m)
    with pytest.raises(ShapeMismatch):
        l1_loss(a, a[:8])


def test_dssim_gradient_matches_fd():
    rng = np.random.default_rng(3)
    a = rng.random((14, 14, 3))
    b = rng.random((14, 14, 3))
    m = np.zeros((14, 14), bool)
    m[2:12, 3:13] = True
    _, g = dssim_loss(a, b, m, grad=True)
    h = 1e-6
    for idx in [(0, 0, 0), (5, 5, 1), (11, 12, 2), (13, 13, 0)]:
        p, q = a.copy(), a.copy()
        p[idx] += h
        q[idx] -= h
        fd = (dssim_loss(p, b, m) - dssim_loss(q, b, m)) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-6, abs=1e-12)


def test_combined_loss_is_weighted_sum():
    rng = np.random.default_rng(4)
    ref = rng.random((12, 12, 3))
    col = rng.random((12, 12, 3))
    hull = rng.uniform(1, 2, (12, 12))
    dep = hull + rng.normal(0, 0.2, (12, 12))
    mask = np.ones((12, 12), bool)
    w = LossWeights(0.8, 0.2, 0.5)
    terms, _, _ = combined_loss(col, dep, ref, mask, hull, w)
    expect = 0.8 * l1_loss(col, ref) + 0.2 * dssim_loss(col, ref) + 0.5 * depth_loss(DepthPair(dep, hull))
    assert terms.total == pytest.approx(expect, rel=1e-14)
    zero, dc, dd = combined_loss(ref, hull, ref, mask, hull, w)
    assert zero.total == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_array_equal(dd, 0.0)
    with pytest.raises(ShapeMismatch):
        combined_loss(col[:6], dep, ref, mask, hull, w)


def test_combined_loss_without_depth_ignores_hull():
    rng = np.random.default_rng(5)
    ref = rng.random((8, 8, 3))
    terms, _, dd = combined_loss(ref, np.full((8, 8), np.inf), ref, None, np.full((8, 8), np.inf),
                                 LossWeights(depth=0.0))
    assert terms.depth == 0.0
    np.testing.assert_array_equal(dd, 0.0)


def test_loss_region():
    ref = np.full((2, 2, 3), 0.5)
    sil = np.array([[True, False], [False, False]])
    fg = loss_region(ref, sil, "foreground", [1, 0, 1])
    np.testing.assert_array_equal(fg[0, 1], [1, 0, 1])
    np.testing.assert_array_equal(fg[0, 0], [0.5, 0.5, 0.5])
    np.testing.assert_array_equal(loss_region(ref, sil, "full"), ref)
    with pytest.raises(ValueError):
        loss_region(ref, sil, "half")
