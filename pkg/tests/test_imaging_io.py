import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from catoptra import imaging_io as io
from catoptra.errors import ParseError, ShapeMismatch
from catoptra.metrics import PSNR_CAP, psnr, ssim, ssim_map
from catoptra.unfolding import Intrinsics, look_at


@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)),
              elements=st.floats(-1e6, 1e6, width=32)), st.booleans())
def test_pfm_round_trip_gray(tmp_path_factory, data, little):
    p = tmp_path_factory.mktemp("pfm") / "a.pfm"
    io.write_pfm(p, data, little_endian=little)
    np.testing.assert_array_equal(io.read_pfm(p), data)


def test_pfm_color_and_orientation(tmp_path):
    img = np.zeros((2, 3, 3), np.float32)
    img[0, 0] = [1, 2, 3]
    io.write_pfm(tmp_path / "c.pfm", img)
    raw = (tmp_path / "c.pfm").read_bytes()
    assert raw.startswith(b"PF\n3 2\n-1\n")
    # bottom row first on disk
    body = np.frombuffer(raw.split(b"\n", 3)[3], "<f4")
    assert body[9:12].tolist() == [1, 2, 3]
    np.testing.assert_array_equal(io.read_pfm(tmp_path / "c.pfm"), img)


@pytest.mark.parametrize("raw", [b"P6\n1 1\n-1\n" + b"\0" * 4, b"Pf\n2 2\n-1\n" + b"\0" * 4,
                                 b"Pf\nx 2\n-1\n", b"Pf\n"])
def test_pfm_parse_errors(tmp_path, raw):
    (tmp_path / "bad.pfm").write_bytes(raw)
    with pytest.raises(ParseError):
        io.read_pfm(tmp_path / "bad.pfm")


def test_pfm_rejects_bad_shape(tmp_path):
    with pytest.raises(ShapeMismatch):
        io.write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))


def test_depth_with_sidecar_mask(tmp_path):
    d = np.array([[1.5, np.inf], [np.nan, 2.0]])
    pfm, mask = io.write_depth(tmp_path / "d.pfm", d)
    assert mask.name == "d.mask.png"
    back = io.read_depth(pfm)
    assert back[0, 0] == 1.5 and back[1, 1] == 2.0
    assert np.isinf(back[0, 1]) and np.isinf(back[1, 0])
    np.testing.assert_array_equal(io.read_mask_png(mask), [[True, False], [False, True]])


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
    io.write_png(tmp_path / "a.png", img)
    np.testing.assert_array_equal(io.read_png(tmp_path / "a.png"), img)
    f = img / 255.0
    io.write_png(tmp_path / "b.png", f)
    np.testing.assert_allclose(io.read_png(tmp_path / "b.png", float_image=True), f, atol=1e-12)


def test_truncated_png_is_parse_error(tmp_path):
    io.write_png(tmp_path / "a.png", np.zeros((16, 16, 3)))
    raw = (tmp_path / "a.png").read_bytes()
    (tmp_path / "t.png").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ParseError):
        io.read_png(tmp_path / "t.png")
    with pytest.raises(ParseError):
        io.read_png(tmp_path / "missing.png")


def test_label_png(tmp_path):
    lab = np.array([[-1, 0], [7, 3]])
    io.write_label_png(tmp_path / "m.png", lab)
    np.testing.assert_array_equal(io.read_label_png(tmp_path / "m.png"), lab)
    with pytest.raises(ValueError):
        io.write_label_png(tmp_path / "m.png", np.array([[300]]))


def test_csv_round_trip_exact_floats(tmp_path):
    rows = [[0, 0.1 + 0.2, "a"], [1, 1e-300, "b"]]
    io.write_csv(tmp_path / "x.csv", ["i", "v", "s"], rows)
    header, back = io.read_csv(tmp_path / "x.csv")
    assert header == ["i", "v", "s"]
    assert float(back[0][1]) == 0.1 + 0.2 and float(back[1][1]) == 1e-300


def test_xyz_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    p, n = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    io.write_xyz(tmp_path / "a.xyz", p, n)
    p2, n2 = io.read_xyz(tmp_path / "a.xyz")
    np.testing.assert_array_equal(p, p2)
    np.testing.assert_array_equal(n, n2)
    io.write_xyz(tmp_path / "b.xyz", p)
    assert io.read_xyz(tmp_path / "b.xyz")[1] is None


@pytest.mark.parametrize("text", ["1 2\n", "1 2 x\n", "1 2 3\n1 2 3 4 5 6\n"])
def test_xyz_parse_errors(tmp_path, text):
    (tmp_path / "bad.xyz").write_text(text)
    with pytest.raises(ParseError) as info:
        io.read_xyz(tmp_path / "bad.xyz")
    assert info.value.line is not None


def test_grid_round_trip(tmp_path):
    g = np.random.default_rng(2).random((4, 5, 6)) > 0.5
    raw, header = io.write_grid(tmp_path / "g.raw", g, [0.1, 0.2, 0.3], 0.01)
    assert raw.stat().st_size == g.size
    grid, origin, voxel = io.read_grid(raw)
    np.testing.assert_array_equal(grid, g)
    np.testing.assert_array_equal(origin, [0.1, 0.2, 0.3])
    assert voxel == 0.01
    raw.write_bytes(raw.read_bytes()[:-1])
    with pytest.raises(ParseError):
        io.read_grid(raw)


def test_camera_json_round_trip(tmp_path):
    from catoptra.pipeline import read_cameras, write_cameras

    k = Intrinsics.centered("pinhole", 100.0, 32)
    cams = [look_at([1, 2, 3], [0, 0, 0], k), look_at([-1, 0.5, 2], [0, 0, 0], k)]
    write_cameras(tmp_path / "cams.json", cams)
    back = read_cameras(tmp_path / "cams.json")
    for a, b in zip(cams, back):
        np.testing.assert_allclose(a.R, b.R, atol=1e-15)
        np.testing.assert_allclose(a.center, b.center, atol=1e-15)
        assert b.intrinsics == k


def test_json_rejects_nan(tmp_path):
    with pytest.raises(ValueError):
        io.write_json(tmp_path / "x.json", {"a": float("nan")})
    assert not (tmp_path / "x.json").exists()
    (tmp_path / "y.json").write_text("{")
    with pytest.raises(ParseError):
        io.read_json(tmp_path / "y.json")


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write_text(tmp_path / "a.txt", "one")
    io.atomic_write_text(tmp_path / "a.txt", "two")
    assert (tmp_path / "a.txt").read_text() == "two"
    assert os.listdir(tmp_path) == ["a.txt"]


def test_atomic_write_keeps_old_file_on_failure(tmp_path, monkeypatch):
    io.atomic_write_text(tmp_path / "a.txt", "old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(io.os, "replace", boom)
    with pytest.raises(OSError):
        io.atomic_write_text(tmp_path / "a.txt", "new")
    assert (tmp_path / "a.txt").read_text() == "old"
    assert os.listdir(tmp_path) == ["a.txt"]


def test_sha256_file(tmp_path):
    (tmp_path / "a").write_bytes(b"abc")
    assert io.sha256_file(tmp_path / "a") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_apply_multiview_mask():
    lab = np.full((6, 6), -1)
    lab[1:3, 1:4] = 0
    lab[4:6, 0:2] = 1
    color = np.random.default_rng(0).random((6, 6, 3))
    fg0 = np.zeros((6, 6), bool)
    fg0[1, 1] = True
    masks = io.MaskSet(lab, [fg0, np.zeros((6, 6), bool), np.zeros((6, 6), bool)])
    subs = io.apply_multiview_mask(color, masks, n_views=3)
    assert subs[0].bbox == (1, 3, 1, 4)
    crop, region = subs[0].crop()
    np.testing.assert_array_equal(crop, color[1:3, 1:4])
    assert region.all()
    assert np.all(subs[1].color[0, 0] == io.BACKGROUND_COLOR)
    assert subs[2].empty and subs[2].bbox == (0, 0, 0, 0)
    with pytest.raises(ShapeMismatch):
        io.apply_multiview_mask(color[:5], masks)


def test_mask_set_validation():
    lab = np.zeros((3, 3), int)
    with pytest.raises(ValueError):
        io.MaskSet(lab, [np.zeros((3, 3), bool), np.ones((3, 3), bool)])
    with pytest.raises(ShapeMismatch):
        io.MaskSet(lab, [np.zeros((2, 3), bool)])


def test_psnr_ssim_identical_and_offset():
    img = np.random.default_rng(0).random((32, 32, 3)) * 0.8
    assert psnr(img, img) == PSNR_CAP
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)
    assert psnr(img, img + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert ssim(img, 0.5 * img) < 1.0


def test_psnr_masked_region():
    a = np.zeros((4, 4, 3))
    b = a.copy()
    b[0, 0] = 1.0
    m = np.ones((4, 4), bool)
    m[0, 0] = False
    assert psnr(a, b, m) == PSNR_CAP
    with pytest.raises(ValueError):
        psnr(a, b, np.zeros((4, 4), bool))
    with pytest.raises(ShapeMismatch):
        psnr(a, b[:3])


def test_ssim_matches_reference_formula_on_constant_images():
    # constant images: SSIM reduces to the luminance term away from the zero-padded border
    a = np.full((20, 20), 0.2)
    b = np.full((20, 20), 0.6)
    c1 = (0.01) ** 2
    expect = (2 * 0.2 * 0.6 + c1) / (0.2 ** 2 + 0.6 ** 2 + c1)
    np.testing.assert_allclose(ssim_map(a, b)[5:-5, 5:-5], expect, rtol=1e-9)
