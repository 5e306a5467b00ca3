"""File formats and mask utilities shared by every stage.

Every writer goes through a temporary file in the target directory followed
by ``os.replace``, so an interrupted run never leaves a torn artifact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError, ShapeMismatch

#: Color sentinel for pixels that see no scene (pure magenta).
BACKGROUND_COLOR = np.array([1.0, 0.0, 1.0])
#: Mosaic color outside every legal mirror path (the lens housing).
HOUSING_COLOR = np.array([0.0, 0.0, 0.0])
#: Stored value of "no sub-view" in 8-bit multi-view mask images.
MASK_BACKGROUND_U8 = 255


# -- atomic writes ---------------------------------------------------------------------


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_json(path):
    p = Path(path)
    try:
        return json.loads(p.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", p) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", p, exc.lineno) from None


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# -- PNG -------------------------------------------------------------------------------


def to_u8(img: np.ndarray) -> np.ndarray:
    if img.dtype == np.uint8:
        return img
    if img.dtype == bool:
        return img.astype(np.uint8) * 255
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> Path:
    """Lossless 8-bit PNG; float images are clipped to [0, 1], bool masks map to 0/255."""
    arr = to_u8(np.asarray(img))
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] not in (3,)):
        raise ShapeMismatch(f"cannot store array of shape {arr.shape} as PNG")
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return atomic_write_bytes(path, buf.getvalue())


def read_png(path, float_image: bool = False) -> np.ndarray:
    p = Path(path)
    try:
        with Image.open(p) as im:
            im.load()
            arr = np.array(im)
    except FileNotFoundError:
        raise ParseError("file not found", p) from None
    except (OSError, SyntaxError, ValueError) as exc:
        raise ParseError(f"unreadable PNG: {exc}", p) from None
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[..., :3]
    return arr.astype(float) / 255.0 if float_image else arr


def write_mask_png(path, mask: np.ndarray) -> Path:
    return write_png(path, np.asarray(mask, dtype=bool))


def read_mask_png(path) -> np.ndarray:
    arr = read_png(path)
    if arr.ndim != 2:
        raise ParseError("mask PNG must be single channel", Path(path))
    return arr > 127


def write_label_png(path, labels: np.ndarray) -> Path:
    """Sub-view ids 0..254 as gray levels, -1 stored as 255."""
    lab = np.asarray(labels)
    if lab.max(initial=-1) >= MASK_BACKGROUND_U8:
        raise ValueError("too many labels for an 8-bit mask")
    return write_png(path, np.where(lab < 0, MASK_BACKGROUND_U8, lab).astype(np.uint8))


def read_label_png(path) -> np.ndarray:
    arr = read_png(path)
    if arr.ndim != 2:
        raise ParseError("label PNG must be single channel", Path(path))
    return np.where(arr == MASK_BACKGROUND_U8, -1, arr.astype(np.int64))


# -- PFM -------------------------------------------------------------------------------


def write_pfm(path, data: np.ndarray, little_endian: bool = True) -> Path:
    """Portable float map, rows stored bottom to top as the format requires."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        kind = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        kind = b"PF"
    else:
        raise ShapeMismatch(f"cannot store array of shape {arr.shape} as PFM")
    h, w = arr.shape[:2]
    scale = -1.0 if little_endian else 1.0
    body = np.flipud(arr).astype("<f4" if little_endian else ">f4").tobytes()
    header = kind + b"\n" + f"{w} {h}\n{scale:g}\n".encode("ascii")
    return atomic_write_bytes(path, header + body)


def read_pfm(path) -> np.ndarray:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", p) from None
    parts = raw.split(b"\n", 3)
    if len(parts) < 4:
        raise ParseError("truncated PFM header", p)
    kind, dims, scale_s, body = parts
    if kind not in (b"PF", b"Pf"):
        raise ParseError(f"bad PFM magic {kind[:8]!r}", p, 1)
    try:
        w, h = (int(x) for x in dims.split())
        scale = float(scale_s)
    except ValueError:
        raise ParseError("bad PFM header", p, 2) from None
    if w <= 0 or h <= 0 or scale == 0:
        raise ParseError("bad PFM dimensions or scale", p, 2)
    ch = 3 if kind == b"PF" else 1
    need = w * h * ch * 4
    if len(body) != need:
        raise ParseError(f"PFM body has {len(body)} bytes, expected {need}", p)
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(body, dtype=dtype).reshape((h, w, ch) if ch == 3 else (h, w))
    return np.flipud(arr).astype(np.float32)


def write_depth(path, depth: np.ndarray) -> tuple[Path, Path]:
    """Depth as PFM with +inf off-surface, plus a sidecar ``.mask.png`` of finite pixels."""
    path = Path(path)
    d = np.asarray(depth, dtype=float)
    finite = np.isfinite(d)
    stored = np.where(finite, d, np.inf)
    mask_path = path.with_suffix(".mask.png")
    write_pfm(path, stored)
    write_mask_png(mask_path, finite)
    return path, mask_path


def read_depth(path) -> np.ndarray:
    path = Path(path)
    d = read_pfm(path).astype(float)
    mask_path = path.with_suffix(".mask.png")
    if mask_path.exists():
        mask = read_mask_png(mask_path)
        if mask.shape != d.shape:
            raise ParseError("depth mask shape differs from depth map", mask_path)
        d = np.where(mask, d, np.inf)
    return d


# -- CSV, point clouds, grids ----------------------------------------------------------


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(x) for x in r])
    return atomic_write_text(path, buf.getvalue())


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def read_csv(path):
    p = Path(path)
    try:
        with open(p, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", p) from None
    if not rows:
        raise ParseError("empty CSV", p)
    return rows[0], rows[1:]


def write_xyz(path, points: np.ndarray, normals: np.ndarray | None = None) -> Path:
    pts = np.asarray(points, dtype=float)
    cols = pts if normals is None else np.hstack([pts, np.asarray(normals, dtype=float)])
    buf = io.StringIO()
    np.savetxt(buf, cols, fmt="%.17g")
    return atomic_write_text(path, buf.getvalue())


def read_xyz(path):
    p = Path(path)
    out = []
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", p) from None
    width = None
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            vals = [float(x) for x in line.split()]
        except ValueError:
            raise ParseError("non-numeric value", p, i) from None
        if len(vals) not in (3, 6) or (width is not None and len(vals) != width):
            raise ParseError(f"expected 3 or 6 columns, got {len(vals)}", p, i)
        width = len(vals)
        out.append(vals)
    arr = np.array(out, dtype=float).reshape(-1, width or 3)
    return arr[:, :3], (arr[:, 3:] if width == 6 else None)


def write_grid(path, grid: np.ndarray, origin, voxel_size: float) -> tuple[Path, Path]:
    """Occupancy as raw uint8 bytes (C order, x slowest) plus a JSON header."""
    path = Path(path)
    g = np.ascontiguousarray(grid, dtype=np.uint8)
    header = {"version": 1, "dims": list(g.shape), "origin": [float(x) for x in origin],
              "voxel_size": float(voxel_size), "dtype": "uint8", "order": "C"}
    atomic_write_bytes(path, g.tobytes())
    hpath = path.with_suffix(".json")
    write_json(hpath, header)
    return path, hpath


def read_grid(path):
    path = Path(path)
    header = read_json(path.with_suffix(".json"))
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", path) from None
    dims = tuple(int(d) for d in header["dims"])
    if len(raw) != int(np.prod(dims)):
        raise ParseError(f"grid has {len(raw)} bytes, header says {dims}", path)
    grid = np.frombuffer(raw, dtype=np.uint8).reshape(dims).astype(bool)
    return grid, np.array(header["origin"], dtype=float), float(header["voxel_size"])


# -- multi-view masks ------------------------------------------------------------------


@dataclass(eq=False)
class MaskSet:
    multiview_mask: np.ndarray  # (H, W) int, -1 outside every sub-view
    foreground: list | None = None  # per-view bool masks, same frame

    def __post_init__(self):
        if self.foreground is not None:
            for k, fg in enumerate(self.foreground):
                if fg.shape != self.multiview_mask.shape:
                    raise ShapeMismatch(f"foreground mask {k} has a different shape")
                if np.any(fg & (self.multiview_mask != k)):
                    raise ValueError(f"foreground mask {k} leaves its sub-view region")


@dataclass(eq=False)
class SubImage:
    color: np.ndarray  # full frame, background sentinel outside the region
    region: np.ndarray
    foreground: np.ndarray | None
    bbox: tuple  # (row0, row1, col0, col1), half-open; (0, 0, 0, 0) when empty
    empty: bool

    def crop(self):
        r0, r1, c0, c1 = self.bbox
        return self.color[r0:r1, c0:c1], self.region[r0:r1, c0:c1]


def apply_multiview_mask(mosaic_color: np.ndarray, masks: MaskSet, n_views: int = 8) -> list:
    """Split a mosaic into per-view sub-images using the multi-view mask."""
    lab = masks.multiview_mask
    if mosaic_color.shape[:2] != lab.shape:
        raise ShapeMismatch(f"mosaic {mosaic_color.shape[:2]} vs mask {lab.shape}")
    out = []
    for k in range(n_views):
        region = lab == k
        color = np.where(region[..., None], mosaic_color, BACKGROUND_COLOR).astype(float)
        if region.any():
            rows = np.flatnonzero(region.any(axis=1))
            cols = np.flatnonzero(region.any(axis=0))
            bbox = (int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1)
        else:
            bbox = (0, 0, 0, 0)
        fg = masks.foreground[k] if masks.foreground is not None else None
        out.append(SubImage(color, region, fg, bbox, not region.any()))
    return out


def warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)
