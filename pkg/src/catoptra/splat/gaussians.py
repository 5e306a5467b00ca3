"""Gaussian cloud parameters, activations and table I/O."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ParseError

SCALE_EPS = 1e-6

TABLE_COLUMNS = ("x", "y", "z", "qw", "qx", "qy", "qz", "sx", "sy", "sz", "opacity", "r", "g", "b")


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices of unit quaternions ``(w, x, y, z)``, shape (N, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_quat_jacobian(q: np.ndarray) -> np.ndarray:
    """d R_ij / d q_k for unit quaternions, shape (N, 4, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    dw = np.stack([zero, -2 * z, 2 * y, 2 * z, zero, -2 * x, -2 * y, 2 * x, zero], axis=1)
    dx = np.stack([zero, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x], axis=1)
    dy = np.stack([-4 * y, 2 * x, 2 * w, 2 * x, zero, 2 * z, -2 * w, 2 * z, -4 * y], axis=1)
    dz = np.stack([-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, zero], axis=1)
    return np.stack([dw, dx, dy, dz], axis=1).reshape(len(q), 4, 3, 3)


def quat_from_rotmat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) of a single rotation matrix."""
    m = np.asarray(R, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        q = [0.0] * 4
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    q = np.array(q)
    return q / np.linalg.norm(q) * (1 if q[0] >= 0 else -1)


@dataclass(eq=False)
class GaussianCloud:
    """Optimizable parameters; activations turn them into physical values.

    ``quats`` are normalized on use, ``log_scales`` map to ``exp + eps``,
    ``opacity_logits`` go through a sigmoid and ``colors`` are raw RGB.
    """

    means: np.ndarray  # (N, 3)
    quats: np.ndarray  # (N, 4) w, x, y, z
    log_scales: np.ndarray  # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    bounds: tuple | None = None  # (lo, hi)
    meta: dict = field(default_factory=dict)

    PARAMS = ("means", "quats", "log_scales", "opacity_logits", "colors")

    def __post_init__(self):
        n = len(self.means)
        for name in self.PARAMS:
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        shapes = {"means": (n, 3), "quats": (n, 4), "log_scales": (n, 3),
                  "opacity_logits": (n,), "colors": (n, 3)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    def __len__(self):
        return len(self.means)

    @classmethod
    def create(cls, means, scales, opacities, colors, quats=None, bounds=None) -> "GaussianCloud":
        means = np.asarray(means, dtype=float)
        n = len(means)
        scales = np.broadcast_to(np.asarray(scales, dtype=float), (n, 3))
        if quats is None:
            quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        op = np.broadcast_to(np.asarray(opacities, dtype=float), (n,))
        return cls(means, quats, np.log(np.maximum(scales - SCALE_EPS, 1e-300)), logit(op),
                   np.broadcast_to(np.asarray(colors, dtype=float), (n, 3)), bounds)

    def copy(self) -> "GaussianCloud":
        return replace(self, **{p: getattr(self, p).copy() for p in self.PARAMS},
                       meta=dict(self.meta))

    @property
    def unit_quats(self) -> np.ndarray:
        return self.quats / np.linalg.norm(self.quats, axis=1, keepdims=True)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales) + SCALE_EPS

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def rotations(self) -> np.ndarray:
        return quat_to_rotmat(self.unit_quats)

    def covariances(self) -> np.ndarray:
        M = self.rotations() * self.scales[:, None, :]
        return M @ np.transpose(M, (0, 2, 1))

    def params(self) -> dict:
        return {p: getattr(self, p) for p in self.PARAMS}

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, p).ravel() for p in self.PARAMS])

    def set_parameter_vector(self, vec: np.ndarray) -> None:
        ofs = 0
        for p in self.PARAMS:
            a = getattr(self, p)
            a[...] = vec[ofs:ofs + a.size].reshape(a.shape)
            ofs += a.size

    def within_bounds(self, factor: float = 2.0) -> bool:
        """All centers inside the bounds box grown ``factor`` times about its center."""
        if self.bounds is None:
            return True
        lo, hi = (np.asarray(b, dtype=float) for b in self.bounds)
        c, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * factor
        return bool(np.all(np.abs(self.means - c) <= half))


def write_cloud(path, cloud: GaussianCloud):
    """PLY-style ASCII table: one Gaussian per row in activated units."""
    from ..imaging_io import atomic_write_text

    q = cloud.unit_quats
    cols = np.column_stack([cloud.means, q, cloud.scales, cloud.opacities, cloud.colors])
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += [f"property double {c}" for c in TABLE_COLUMNS]
    lines.append("end_header")
    lines += [" ".join(repr(float(v)) for v in row) for row in cols]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_cloud(path) -> GaussianCloud:
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", p) from None
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing ply magic", p, 1)
    count, props, body = None, [], None
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "element" and len(tok) == 3 and tok[1] == "vertex":
            count = int(tok[2])
        elif tok[0] == "property":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body = i
            break
    if body is None or count is None:
        raise ParseError("incomplete header", p)
    if tuple(props) != TABLE_COLUMNS:
        raise ParseError(f"unexpected columns {props}", p)
    rows = []
    for i, line in enumerate(lines[body:body + count], start=body + 1):
        try:
            vals = [float(v) for v in line.split()]
        except ValueError:
            raise ParseError("non-numeric value", p, i) from None
        if len(vals) != len(TABLE_COLUMNS):
            raise ParseError(f"expected {len(TABLE_COLUMNS)} values, got {len(vals)}", p, i)
        rows.append(vals)
    if len(rows) != count:
        raise ParseError(f"expected {count} rows, found {len(rows)}", p)
    a = np.array(rows, dtype=float).reshape(-1, len(TABLE_COLUMNS))
    if np.any(a[:, 7:10] <= SCALE_EPS) or np.any((a[:, 10] <= 0) | (a[:, 10] >= 1)):
        raise ParseError("scales must exceed the floor and opacities lie in (0, 1)", p)
    return GaussianCloud(a[:, 0:3], a[:, 3:7], np.log(a[:, 7:10] - SCALE_EPS), logit(a[:, 10]), a[:, 11:14])
