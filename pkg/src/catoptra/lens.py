"""Closed-form geometry of one mirror pair.

All angles are radians internally. ``MirrorPairConfig.from_degrees`` and the
JSON helpers convert at the boundary.

Cross-section convention: in the plane spanned by the pair's radial axis ``r``
and the vertical ``z``, the inner mirror M1 runs from its upper edge ``A`` at
``r = d1`` down and outward to ``B``; a downward camera ray reflects off M1,
then off the outer mirror M2 (upper edge ``C`` at ``r = d2``), and leaves
inward and downward at ``2 * (alpha2 - alpha1)`` from the vertical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConditionViolation, DegenerateFov, InfeasibleAngles, SceneTooLarge

#: Largest accepted ``2 * delta_alpha`` for designs (well-conditioned cos).
MAX_TWO_DELTA = math.radians(80.0)

LENS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MirrorPairConfig:
    alpha1: float  # tilt of the inner mirror M1 from horizontal, radians
    alpha2: float  # tilt of the outer mirror M2, radians
    h1: float  # vertically projected height of M1
    h2: float
    d1: float  # distance of M1's upper edge to the central ray
    d2: float
    units: str = "mm"

    @classmethod
    def from_degrees(cls, alpha1_deg, alpha2_deg, h1, h2, d1, d2, units="mm"):
        return cls(math.radians(alpha1_deg), math.radians(alpha2_deg),
                   float(h1), float(h2), float(d1), float(d2), units)

    @property
    def alpha1_deg(self) -> float:
        return math.degrees(self.alpha1)

    @property
    def alpha2_deg(self) -> float:
        return math.degrees(self.alpha2)

    @property
    def delta_alpha(self) -> float:
        return self.alpha2 - self.alpha1

    def scaled(self, factor: float) -> "MirrorPairConfig":
        return MirrorPairConfig(self.alpha1, self.alpha2, self.h1 * factor,
                                self.h2 * factor, self.d1 * factor,
                                self.d2 * factor, self.units)

    def replace(self, **changes) -> "MirrorPairConfig":
        values = dict(alpha1=self.alpha1, alpha2=self.alpha2, h1=self.h1,
                      h2=self.h2, d1=self.d1, d2=self.d2, units=self.units)
        values.update(changes)
        return MirrorPairConfig(**values)

    def to_dict(self) -> dict:
        return {
            "version": LENS_SCHEMA_VERSION,
            "alpha1_deg": self.alpha1_deg,
            "alpha2_deg": self.alpha2_deg,
            "h1": self.h1,
            "h2": self.h2,
            "d1": self.d1,
            "d2": self.d2,
            "units": self.units,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MirrorPairConfig":
        keys = {"version", "alpha1_deg", "alpha2_deg", "h1", "h2", "d1", "d2", "units"}
        unknown = set(data) - keys
        if unknown:
            raise ValueError(f"unknown lens keys: {sorted(unknown)}")
        if data.get("version", LENS_SCHEMA_VERSION) != LENS_SCHEMA_VERSION:
            raise ValueError(f"unsupported lens schema version {data.get('version')}")
        missing = keys - {"version", "units"} - set(data)
        if missing:
            raise ValueError(f"missing lens keys: {sorted(missing)}")
        return cls.from_degrees(data["alpha1_deg"], data["alpha2_deg"], data["h1"],
                                data["h2"], data["d1"], data["d2"],
                                data.get("units", "mm"))


@dataclass(frozen=True)
class ViewingVolume:
    theta: float  # half apex angle
    beta: float  # side angle at the base
    base_length: float
    beam_width: float
    height: float
    apex_fov: float  # 2 * theta


@dataclass(frozen=True)
class SceneBox:
    width: float
    length: float
    height: float

    def __post_init__(self):
        if not self.width > 0 or not self.height > 0:
            raise ValueError("scene box dimensions must be positive")
        if self.length < self.width:
            raise ValueError("scene box expects length >= width")

    def corners(self) -> np.ndarray:
        """Eight corners of the box centered at the origin, length along x."""
        hx, hy, hz = self.length / 2, self.width / 2, self.height / 2
        return np.array([[sx * hx, sy * hy, sz * hz]
                         for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])


@dataclass(frozen=True)
class SensorSpec:
    max_beam_width: float

    def __post_init__(self):
        if not self.max_beam_width > 0:
            raise ValueError("max_beam_width must be positive")


@dataclass(frozen=True)
class DesignMargins:
    alpha1: float = math.radians(60.0)
    d1_ratio: float = 0.05  # d1 = d1_ratio * h1
    h2_margin: float = 1.05
    d2_margin: float = 1.05  # scales the M1-M2 separation d2 - d1


@dataclass(frozen=True)
class ConditionResult:
    name: str
    passed: bool
    margin: float  # lhs - rhs; negative when violated
    required: float = float("nan")


@dataclass(frozen=True)
class ConditionReport:
    results: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name: str) -> ConditionResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def failures(self) -> list:
        return [r for r in self.results if not r.passed]

    def to_dict(self) -> dict:
        def num(x):
            return x if math.isfinite(x) else None

        return {r.name: {"passed": r.passed, "margin": num(r.margin), "required": num(r.required)}
                for r in self.results}


def _require_angle_order(cfg: MirrorPairConfig) -> None:
    quarter, right = math.pi / 4, math.pi / 2
    if not (quarter < cfg.alpha1 < cfg.alpha2 < right):
        raise ConditionViolation(
            f"condition (i) requires 45 < alpha1 < alpha2 < 90 degrees, got "
            f"alpha1={cfg.alpha1_deg:.6g}, alpha2={cfg.alpha2_deg:.6g}")


def incidence_angles(cfg: MirrorPairConfig) -> tuple[float, float]:
    """Incidence angles of the central vertical ray at M1 and M2."""
    _require_angle_order(cfg)
    return cfg.alpha1, 2.0 * cfg.alpha1 - cfg.alpha2


def apex_angle(cfg: MirrorPairConfig) -> float:
    """Half apex angle of the viewing volume: ``2 * (alpha2 - alpha1)``."""
    _require_angle_order(cfg)
    return 2.0 * (cfg.alpha2 - cfg.alpha1)


def beam_width(cfg: MirrorPairConfig) -> float:
    _require_angle_order(cfg)
    return cfg.h1 / math.tan(cfg.alpha1)


def base_length(cfg: MirrorPairConfig) -> float:
    theta = apex_angle(cfg)
    if theta >= math.pi / 2:
        raise DegenerateFov(f"2*delta_alpha = {math.degrees(theta):.6g} deg >= 90 deg")
    return beam_width(cfg) / math.cos(theta)


def viewing_volume(cfg: MirrorPairConfig) -> ViewingVolume:
    theta = apex_angle(cfg)
    w = beam_width(cfg)
    length = base_length(cfg)
    height = w / math.sin(theta)
    return ViewingVolume(theta=theta, beta=math.pi / 2 - theta, base_length=length,
                         beam_width=w, height=height, apex_fov=2.0 * theta)


def min_h2(cfg: MirrorPairConfig) -> float:
    """Smallest M2 height that still catches the whole beam from M1."""
    a1, a2 = cfg.alpha1, cfg.alpha2
    return math.sin(a2) / (math.tan(a1) * math.cos(a2 - 2.0 * a1)) * cfg.h1


def min_d2(cfg: MirrorPairConfig) -> float:
    """Smallest d2 for which no ray leaving M2 strikes M1 again."""
    a1 = cfg.alpha1
    two_delta = 2.0 * cfg.delta_alpha
    cot_2d = 1.0 / math.tan(two_delta)
    cot_2a1 = 1.0 / math.tan(2.0 * a1)
    ratio = (math.tan(a1) + cot_2d) / (math.tan(a1) * (cot_2d - cot_2a1))
    return ratio * cfg.h1 + cfg.d1


def check_conditions(cfg: MirrorPairConfig) -> ConditionReport:
    quarter, right = math.pi / 4, math.pi / 2
    order_margin = min(cfg.alpha1 - quarter, cfg.alpha2 - cfg.alpha1, right - cfg.alpha2)
    results = [ConditionResult("i", order_margin > 0, order_margin)]
    dims_margin = min(cfg.h1, cfg.h2, cfg.d1, cfg.d2 - cfg.d1)
    results.append(ConditionResult("dimensions", dims_margin > 0, dims_margin))
    if order_margin > 0:
        need_h2 = min_h2(cfg)
        need_d2 = min_d2(cfg)
        results.append(ConditionResult("ii", cfg.h2 >= need_h2, cfg.h2 - need_h2, need_h2))
        results.append(ConditionResult("iii", cfg.d2 >= need_d2, cfg.d2 - need_d2, need_d2))
    else:
        nan = float("nan")
        results.append(ConditionResult("ii", False, nan))
        results.append(ConditionResult("iii", False, nan))
    return ConditionReport(tuple(results))


def require_valid(cfg: MirrorPairConfig) -> None:
    report = check_conditions(cfg)
    if not report.ok:
        names = ", ".join(f"({r.name}) margin={r.margin:.3g}" for r in report.failures())
        raise ConditionViolation(f"mirror pair violates {names}")


def optimal_delta_alpha(scene: SceneBox, sensor: SensorSpec) -> float:
    """Angle difference at which the scene box is inscribed in the viewing volume.

    Solves ``H sin(2 da) + L cos(2 da) = w_max`` on the branch where the box
    grows into the volume as ``da`` increases.
    """
    L, H, w = scene.length, scene.height, sensor.max_beam_width
    if w < L:
        raise SceneTooLarge(f"beam width {w:g} cannot span scene length {L:g}")
    if w == L:
        return 0.0
    diag = math.hypot(L, H)
    if w > diag * (1.0 + 1e-12):
        raise DegenerateFov(
            f"w_max={w:g} > sqrt(L^2+H^2)={diag:g}: the box fits at every angle")
    # w == diag is the tangent case: the inscription touches at the maximum
    two_delta = math.asin(min(w / diag, 1.0)) - math.atan2(L, H)
    if two_delta <= 0.0:
        raise SceneTooLarge("no positive angle difference encloses the scene")
    if two_delta > MAX_TWO_DELTA:
        raise DegenerateFov(f"2*delta_alpha = {math.degrees(two_delta):.6g} deg exceeds 80 deg")
    return two_delta / 2.0


def inscription_residual(scene: SceneBox, sensor: SensorSpec, delta_alpha: float) -> float:
    two = 2.0 * delta_alpha
    return scene.height * math.sin(two) + scene.length * math.cos(two) - sensor.max_beam_width


def design_lens(scene: SceneBox, sensor: SensorSpec,
                margins: DesignMargins = DesignMargins(),
                delta_alpha: float | None = None) -> MirrorPairConfig:
    """Mirror pair whose viewing volume inscribes ``scene``.

    ``delta_alpha`` overrides the optimum (used by callers that clamp it).
    """
    if delta_alpha is None:
        delta_alpha = optimal_delta_alpha(scene, sensor)
    a1 = margins.alpha1
    a2 = a1 + delta_alpha
    if a2 >= math.pi / 2:
        raise InfeasibleAngles(
            f"alpha1 + delta_alpha = {math.degrees(a2):.6g} deg >= 90 deg")
    if min(margins.h2_margin, margins.d2_margin) < 1.0:
        raise ValueError("margin factors must be >= 1")
    h1 = sensor.max_beam_width * math.tan(a1)
    d1 = margins.d1_ratio * h1
    probe = MirrorPairConfig(a1, a2, h1, 1.0, d1, 2.0 * d1)
    _require_angle_order(probe)
    h2 = margins.h2_margin * min_h2(probe)
    d2 = d1 + margins.d2_margin * (min_d2(probe) - d1)
    cfg = MirrorPairConfig(a1, a2, h1, h2, d1, d2)
    require_valid(cfg)
    return cfg


@dataclass(frozen=True)
class PairProfile:
    """Mirror edges of one pair in the (r, z) cross-section.

    ``z`` is shifted so the viewing-volume center sits at ``z = 0``.
    """

    A: np.ndarray  # M1 upper edge
    B: np.ndarray  # M1 lower edge
    C: np.ndarray  # M2 upper edge
    D: np.ndarray  # M2 lower edge
    n1: np.ndarray  # M1 reflective normal (up, outward)
    n2: np.ndarray  # M2 reflective normal (down, inward)
    exit_dir: np.ndarray

    @property
    def top(self) -> float:
        return float(max(self.A[1], self.C[1]))


def pair_profile(cfg: MirrorPairConfig) -> PairProfile:
    _require_angle_order(cfg)
    a1, a2 = cfg.alpha1, cfg.alpha2
    w = cfg.h1 / math.tan(a1)
    A = np.array([cfg.d1, 0.0])
    B = np.array([cfg.d1 + w, -cfg.h1])
    e1 = np.array([math.sin(2 * a1), math.cos(2 * a1)])
    # the ray reflected at A lands on M2's upper edge
    C = A + e1 * ((cfg.d2 - cfg.d1) / e1[0])
    m2 = np.array([math.cos(a2), -math.sin(a2)])
    D = C + m2 * (cfg.h2 / math.sin(a2))
    two_delta = 2.0 * (a2 - a1)
    exit_dir = np.array([-math.sin(two_delta), -math.cos(two_delta)])

    # central ray: hits M1 midway, then M2, then crosses the axis
    P1 = (A + B) / 2.0
    # P1 + s e1 = C + u m2
    s, _ = np.linalg.solve(np.column_stack([e1, -m2]), C - P1)
    P2 = P1 + s * e1
    z0 = P2[1] - P2[0] * exit_dir[1] / exit_dir[0]
    shift = np.array([0.0, z0])
    return PairProfile(A=A - shift, B=B - shift, C=C - shift, D=D - shift,
                       n1=np.array([math.sin(a1), math.cos(a1)]),
                       n2=np.array([-math.sin(a2), -math.cos(a2)]),
                       exit_dir=exit_dir)


def rhombus_signed_distance(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Signed distance of 2-D points to a convex polygon (negative inside)."""
    pts = np.atleast_2d(points)
    verts = np.asarray(vertices, dtype=float)
    n = len(verts)
    centroid = verts.mean(axis=0)
    dists = []
    for i in range(n):
        p, q = verts[i], verts[(i + 1) % n]
        edge = q - p
        normal = np.array([edge[1], -edge[0]]) / np.hypot(*edge)
        if np.dot(centroid - p, normal) > 0:
            normal = -normal
        dists.append((pts - p) @ normal)
    return np.max(np.stack(dists, axis=1), axis=1)


def cross_section_corners(scene: SceneBox) -> np.ndarray:
    """Box corners in the (r, z) plane of a pair, length along the radial axis."""
    hl, hh = scene.length / 2, scene.height / 2
    return np.array([[-hl, -hh], [hl, -hh], [hl, hh], [-hl, hh]])
