"""Synthetic scenes: analytic primitives, triangle meshes, textures and shading."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import NonTriangleFace, ParseError

SCENE_SCHEMA_VERSION = 1


# -- textures --------------------------------------------------------------------------


@dataclass(frozen=True)
class Texture:
    """Procedural albedo modulation in world coordinates.

    ``kind`` is ``"flat"``, ``"checker"`` (period = cell size) or ``"sine"``.
    """

    kind: str = "flat"
    scale: float = 1.0
    contrast: float = 0.5

    def factor(self, points: np.ndarray) -> np.ndarray:
        if self.kind == "flat":
            return np.ones(len(points))
        q = points / self.scale
        if self.kind == "checker":
            parity = np.floor(q).astype(np.int64).sum(axis=1) % 2
            return np.where(parity == 0, 1.0, 1.0 - self.contrast)
        if self.kind == "sine":
            s = np.sin(2 * np.pi * q[:, 0]) * np.sin(2 * np.pi * q[:, 1]) * np.sin(2 * np.pi * q[:, 2])
            return 1.0 - self.contrast * 0.5 * (1.0 + s)
        raise ValueError(f"unknown texture kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale, "contrast": self.contrast}


# -- primitives ------------------------------------------------------------------------


@dataclass(eq=False)
class Primitive:
    albedo: np.ndarray
    texture: Texture

    def intersect(self, origins, dirs):
        """Ray parameter and outward unit normal of the nearest hit (inf on miss)."""
        raise NotImplementedError

    def surface_samples(self, count: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


@dataclass(eq=False)
class Sphere(Primitive):
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0

    def intersect(self, origins, dirs):
        oc = origins - self.center
        b = np.sum(oc * dirs, axis=1)
        c = np.sum(oc * oc, axis=1) - self.radius ** 2
        disc = b * b - c
        with np.errstate(invalid="ignore"):
            root = np.sqrt(disc)
        t0 = -b - root
        t1 = -b + root
        t = np.where(t0 > 1e-12, t0, t1)
        hit = (disc >= 0) & (t > 1e-12)
        t = np.where(hit, t, np.inf)
        p = origins + np.where(hit, t, 0.0)[:, None] * dirs
        normals = (p - self.center) / self.radius
        return t, normals

    def surface_samples(self, count, rng):
        v = rng.normal(size=(count, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.center + self.radius * v

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def to_dict(self):
        return {"kind": "sphere", "center": self.center.tolist(), "radius": self.radius}


@dataclass(eq=False)
class Box(Primitive):
    lo: np.ndarray = field(default_factory=lambda: -np.ones(3))
    hi: np.ndarray = field(default_factory=lambda: np.ones(3))

    def intersect(self, origins, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t0 = (self.lo - origins) * inv
            t1 = (self.hi - origins) * inv
        near = np.minimum(t0, t1)
        far = np.maximum(t0, t1)
        near = np.where(np.isnan(near), -np.inf, near)
        far = np.where(np.isnan(far), np.inf, far)
        t_near = near.max(axis=1)
        t_far = far.min(axis=1)
        axis_near = near.argmax(axis=1)
        axis_far = far.argmin(axis=1)
        front = t_near > 1e-12
        t = np.where(front, t_near, t_far)
        axis = np.where(front, axis_near, axis_far)
        hit = (t_far >= t_near) & (t > 1e-12)
        t = np.where(hit, t, np.inf)
        normals = np.zeros_like(origins)
        rows = np.arange(len(origins))
        sgn = np.where(front, -np.sign(dirs[rows, axis]), np.sign(dirs[rows, axis]))
        normals[rows, axis] = sgn
        return t, normals

    def surface_samples(self, count, rng):
        size = self.hi - self.lo
        areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]])
        face_p = np.repeat(areas, 2) / (2 * areas.sum())
        faces = rng.choice(6, size=count, p=face_p)
        pts = self.lo + rng.random((count, 3)) * size
        axis = faces // 2
        side = faces % 2
        rows = np.arange(count)
        pts[rows, axis] = np.where(side == 0, self.lo[axis], self.hi[axis])
        return pts

    def bounds(self):
        return self.lo.copy(), self.hi.copy()

    def to_dict(self):
        return {"kind": "box", "min": self.lo.tolist(), "max": self.hi.tolist()}


# -- meshes ----------------------------------------------------------------------------


@dataclass(eq=False)
class BVH:
    """Flattened bounding-volume hierarchy over triangle centroids (median splits)."""

    node_min: np.ndarray
    node_max: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    tri_index: np.ndarray

    @classmethod
    def build(cls, tri_lo: np.ndarray, tri_hi: np.ndarray, leaf_size: int = 4) -> "BVH":
        centroid = 0.5 * (tri_lo + tri_hi)
        order = np.arange(len(tri_lo))
        mins, maxs, lefts, rights, starts, counts = [], [], [], [], [], []

        def new_node():
            mins.append(None)
            maxs.append(None)
            lefts.append(-1)
            rights.append(-1)
            starts.append(0)
            counts.append(0)
            return len(mins) - 1

        root = new_node()
        stack = [(root, 0, len(order))]
        while stack:
            node, s, e = stack.pop()
            idx = order[s:e]
            mins[node] = tri_lo[idx].min(axis=0)
            maxs[node] = tri_hi[idx].max(axis=0)
            if e - s <= leaf_size:
                starts[node], counts[node] = s, e - s
                continue
            c = centroid[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            local = np.argsort(c[:, axis], kind="stable")
            order[s:e] = idx[local]
            mid = s + (e - s) // 2
            a, b = new_node(), new_node()
            lefts[node], rights[node] = a, b
            stack.append((b, mid, e))
            stack.append((a, s, mid))
        i8 = np.int64
        return cls(np.array(mins, dtype=float), np.array(maxs, dtype=float),
                   np.array(lefts, dtype=i8), np.array(rights, dtype=i8),
                   np.array(starts, dtype=i8), np.array(counts, dtype=i8),
                   np.ascontiguousarray(order, dtype=i8))


@dataclass(eq=False)
class Mesh(Primitive):
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    path: str | None = None
    bvh: BVH | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        tri = self.vertices[self.faces]
        self.v0 = np.ascontiguousarray(tri[:, 0])
        self.e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
        self.e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
        cross = np.cross(self.e1, self.e2)
        self.areas = 0.5 * np.linalg.norm(cross, axis=1)
        if len(self.faces) and not np.all(self.areas > 0):
            raise ValueError("mesh has zero-area triangles")
        self.face_normals = cross / (2.0 * self.areas[:, None]) if len(self.faces) else cross
        if self.bvh is None and len(self.faces):
            self.bvh = BVH.build(tri.min(axis=1), tri.max(axis=1))

    @property
    def n_triangles(self) -> int:
        return len(self.faces)

    def intersect_index(self, origins, dirs):
        b = self.bvh
        o = np.ascontiguousarray(origins, dtype=float)
        d = np.ascontiguousarray(dirs, dtype=float)
        return kernels.bvh_intersect(o, d, self.v0, self.e1, self.e2, b.node_min, b.node_max,
                                     b.left, b.right, b.start, b.count, b.tri_index)

    def intersect(self, origins, dirs):
        t, tri = self.intersect_index(origins, dirs)
        normals = np.zeros_like(origins)
        hit = tri >= 0
        n = self.face_normals[tri[hit]]
        # report the side facing the ray
        flip = np.sum(n * dirs[hit], axis=1) > 0
        n[flip] *= -1
        normals[hit] = n
        return t, normals

    def surface_samples(self, count, rng):
        tri = rng.choice(len(self.faces), size=count, p=self.areas / self.areas.sum())
        r1 = np.sqrt(rng.random(count))
        r2 = rng.random(count)
        b = r1 * (1 - r2)
        return self.v0[tri] + b[:, None] * self.e1[tri] + (r1 * r2)[:, None] * self.e2[tri]

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def is_closed(self) -> bool:
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def to_dict(self):
        return {"kind": "mesh", "path": self.path}


def parse_obj(text: str, path=None, triangulate: bool = False):
    """Vertices and triangle faces from OBJ-style text (``v`` and ``f`` statements).

    Faces may use ``i``, ``i/t``, ``i//n`` or ``i/t/n`` references and negative
    indices. Other statements (``vn``, ``vt``, ``o``, ``g``, ``s``, ``usemtl``,
    ``mtllib``) are ignored.
    """
    verts, faces = [], []
    ignored = {"vn", "vt", "o", "g", "s", "usemtl", "mtllib", "l", "vp"}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        head = tok[0]
        if head == "v":
            if len(tok) not in (4, 5, 7):
                raise ParseError(f"vertex needs 3 coordinates, got {len(tok) - 1}", path, lineno)
            try:
                xyz = [float(x) for x in tok[1:4]]
            except ValueError:
                raise ParseError(f"bad vertex coordinate in {line!r}", path, lineno) from None
            if not all(math.isfinite(x) for x in xyz):
                raise ParseError("non-finite vertex coordinate", path, lineno)
            verts.append(xyz)
        elif head == "f":
            refs = tok[1:]
            if len(refs) < 3:
                raise ParseError(f"face needs at least 3 vertices, got {len(refs)}", path, lineno)
            idx = []
            for r in refs:
                try:
                    i = int(r.split("/")[0])
                except ValueError:
                    raise ParseError(f"bad face index {r!r}", path, lineno) from None
                if i == 0 or abs(i) > len(verts):
                    raise ParseError(f"face index {i} out of range (have {len(verts)} vertices)",
                                     path, lineno)
                idx.append(i - 1 if i > 0 else len(verts) + i)
            if len(idx) > 3 and not triangulate:
                raise NonTriangleFace(f"face with {len(idx)} vertices", path, lineno)
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
        elif head in ignored:
            continue
        else:
            raise ParseError(f"unknown statement {head!r}", path, lineno)
    if not faces:
        raise ParseError("mesh has no faces", path)
    return np.array(verts, dtype=float), np.array(faces, dtype=np.int64)


def load_mesh(path, triangulate: bool = False, albedo=(0.8, 0.8, 0.8),
              texture: Texture | None = None) -> Mesh:
    p = Path(path)
    try:
        text = p.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read mesh: {exc}", p) from None
    verts, faces = parse_obj(text, p, triangulate)
    try:
        return Mesh(np.asarray(albedo, dtype=float), texture or Texture(), verts, faces, str(p))
    except ValueError as exc:
        raise ParseError(str(exc), p) from None


def write_obj(path, vertices, faces) -> None:
    from .imaging_io import atomic_write_text

    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    atomic_write_text(path, "\n".join(lines) + "\n")


def box_mesh(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Closed, outward-wound 12-triangle box."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    f = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
                  [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]])
    return v, f


def l_shape_mesh(size: float = 1.0, thickness: float = 0.4) -> tuple[np.ndarray, np.ndarray]:
    """Closed L-shaped prism centered on the origin: a concave test object.

    The L lies in the x-y plane (two arms of length ``size``, width ``size/2``)
    and is extruded ``thickness`` along z.
    """
    a, b = size, size / 2.0
    outline = np.array([[0, 0], [a, 0], [a, b], [b, b], [b, a], [0, a]], dtype=float)
    outline -= outline.mean(axis=0)
    hz = thickness / 2.0
    n = len(outline)
    verts = np.vstack([np.column_stack([outline, np.full(n, -hz)]),
                       np.column_stack([outline, np.full(n, hz)])])
    faces = []
    # caps: a fan from corner 0 stays inside the L
    bottom = [[0, 2, 1], [0, 3, 2], [0, 4, 3], [0, 5, 4]]
    for f in bottom:
        faces.append(f)
        faces.append([f[0] + n, f[2] + n, f[1] + n])
    for i in range(n):
        j = (i + 1) % n
        faces.append([i, j, j + n])
        faces.append([i, j + n, i + n])
    return verts, np.array(faces, dtype=np.int64)


# -- scene -----------------------------------------------------------------------------


@dataclass(eq=False)
class Light:
    direction: np.ndarray = field(default_factory=lambda: np.array([0.3, -0.4, 1.0]) / math.sqrt(1.25))
    ambient: float = 0.35
    diffuse: float = 0.65

    def to_dict(self):
        return {"direction": self.direction.tolist(), "ambient": self.ambient, "diffuse": self.diffuse}


@dataclass(eq=False)
class Scene:
    primitives: list
    light: Light = field(default_factory=Light)
    source: str | None = None

    def intersect(self, origins, dirs):
        """Nearest hit over all primitives: ``(t, normals, primitive index)``."""
        n = len(origins)
        t_best = np.full(n, np.inf)
        normals = np.zeros((n, 3))
        which = np.full(n, -1, dtype=np.int64)
        for k, prim in enumerate(self.primitives):
            t, nrm = prim.intersect(origins, dirs)
            better = t < t_best
            t_best = np.where(better, t, t_best)
            normals[better] = nrm[better]
            which[better] = k
        return t_best, normals, which

    def shade(self, points, normals, which, dirs) -> np.ndarray:
        """Lambertian color with ambient term; two-sided normals."""
        out = np.zeros((len(points), 3))
        light = self.light.direction / np.linalg.norm(self.light.direction)
        n = np.where((np.sum(normals * dirs, axis=1) > 0)[:, None], -normals, normals)
        lam = np.clip(n @ light, 0.0, None)
        intensity = self.light.ambient + self.light.diffuse * lam
        for k, prim in enumerate(self.primitives):
            sel = which == k
            if not sel.any():
                continue
            tex = prim.texture.factor(points[sel])
            out[sel] = prim.albedo[None, :] * (tex * intensity[sel])[:, None]
        return np.clip(out, 0.0, 1.0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.primitives:
            return np.zeros(3), np.zeros(3)
        lo = np.min([p.bounds()[0] for p in self.primitives], axis=0)
        hi = np.max([p.bounds()[1] for p in self.primitives], axis=0)
        return lo, hi

    def surface_samples(self, count: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        if not self.primitives:
            return np.zeros((0, 3))
        per = np.full(len(self.primitives), count // len(self.primitives))
        per[: count - per.sum()] += 1
        return np.vstack([p.surface_samples(int(c), rng) for p, c in zip(self.primitives, per)])

    def to_dict(self) -> dict:
        prims = []
        for p in self.primitives:
            d = p.to_dict()
            d["albedo"] = p.albedo.tolist()
            d["texture"] = p.texture.to_dict()
            prims.append(d)
        return {"version": SCENE_SCHEMA_VERSION, "primitives": prims,
                "light": self.light.to_dict()}


def _vec(d, key, n, where):
    try:
        v = np.asarray(d[key], dtype=float)
    except KeyError:
        raise ParseError(f"{where}: missing {key!r}") from None
    except (TypeError, ValueError):
        raise ParseError(f"{where}: {key!r} must be numeric") from None
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise ParseError(f"{where}: {key!r} must be {n} finite numbers")
    return v


def scene_from_dict(data: dict, base_dir=None) -> Scene:
    if not isinstance(data, dict) or data.get("version") != SCENE_SCHEMA_VERSION:
        raise ParseError(f"unsupported scene schema version {data.get('version') if isinstance(data, dict) else None}")
    unknown = set(data) - {"version", "primitives", "light", "background"}
    if unknown:
        raise ParseError(f"unknown scene keys {sorted(unknown)}")
    prims = []
    for i, p in enumerate(data.get("primitives", [])):
        where = f"primitive {i}"
        albedo = _vec(p, "albedo", 3, where) if "albedo" in p else np.array([0.8, 0.8, 0.8])
        tex = Texture(**p["texture"]) if "texture" in p else Texture()
        kind = p.get("kind")
        if kind == "sphere":
            r = float(p.get("radius", 0))
            if not r > 0:
                raise ParseError(f"{where}: sphere radius must be positive")
            prims.append(Sphere(albedo, tex, _vec(p, "center", 3, where), r))
        elif kind == "box":
            lo, hi = _vec(p, "min", 3, where), _vec(p, "max", 3, where)
            if not np.all(hi > lo):
                raise ParseError(f"{where}: box max must exceed min")
            prims.append(Box(albedo, tex, lo, hi))
        elif kind == "mesh":
            mpath = Path(p["path"])
            if base_dir is not None and not mpath.is_absolute():
                mpath = Path(base_dir) / mpath
            mesh = load_mesh(mpath, bool(p.get("triangulate", False)), albedo, tex)
            if "translate" in p or "scale" in p:
                s = float(p.get("scale", 1.0))
                off = _vec(p, "translate", 3, where) if "translate" in p else np.zeros(3)
                mesh = Mesh(albedo, tex, mesh.vertices * s + off, mesh.faces, str(mpath))
            prims.append(mesh)
        else:
            raise ParseError(f"{where}: unknown primitive kind {kind!r}")
    light = Light()
    if "light" in data:
        ld = data["light"]
        light = Light(_vec(ld, "direction", 3, "light"), float(ld.get("ambient", light.ambient)),
                      float(ld.get("diffuse", light.diffuse)))
    return Scene(prims, light)


def load_scene(path) -> Scene:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read scene: {exc}", p) from None
    try:
        scene = scene_from_dict(data, p.parent)
    except ParseError as exc:
        if exc.path is None:
            raise ParseError(exc.reason, p) from None
        raise
    scene.source = str(p)
    return scene


def sphere_scene(radius: float = 0.3, center=(0.0, 0.0, 0.0), texture: Texture | None = None) -> Scene:
    tex = texture if texture is not None else Texture("checker", radius / 2.0, 0.5)
    return Scene([Sphere(np.array([0.9, 0.6, 0.2]), tex, np.asarray(center, float), radius)])
