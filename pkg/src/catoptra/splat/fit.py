"""Toy-scale optimizer: hull initialization, Adam updates, training log."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.spatial import cKDTree

from ..errors import Diverged, EmptyHull, ShapeMismatch
from ..hull import VisualHull, hull_depth, hull_to_point_cloud
from ..imaging_io import BACKGROUND_COLOR
from ..metrics import psnr, ssim
from .gaussians import GaussianCloud
from .loss import LossTerms, LossWeights, combined_loss, loss_region
from .render import RenderSettings, render, render_backward

LOG_COLUMNS = ("iteration", "l1", "dssim", "depth", "total")


def default_learning_rates(extent: float) -> dict:
    return {"means": 1.6e-4 * extent, "colors": 1e-2, "opacity_logits": 5e-2,
            "log_scales": 5e-3, "quats": 1e-3}


@dataclass
class FitConfig:
    iterations: int = 2000
    n_gaussians: int = 2000
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    sign: str = "as-printed"
    temperature: float = 1.0
    back_face: bool = False  # hull depth target from the last exit instead of the first entry
    region: str = "foreground"
    views_per_step: int = 1
    threads: int = 1
    learning_rates: dict | None = None  # None: scaled to the hull extent
    init_opacity: float = 0.3
    alpha_min: float = 1.0 / 255.0
    log_every: int = 1
    depth_mode: str = "accumulated"  # or "expected": divided by the pixel alpha

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.iterations < 0 or self.n_gaussians < 1 or self.views_per_step < 1 or self.threads < 1:
            raise ValueError("iterations >= 0, n_gaussians >= 1, views_per_step >= 1, threads >= 1")
        if not 0 < self.init_opacity < 1:
            raise ValueError("init_opacity must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown fit keys {sorted(extra)}")
        return cls(**d)


class Adam:
    def __init__(self, params: dict, rates: dict, beta1=0.9, beta2=0.999, eps=1e-15):
        self.rates = rates
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params: dict, grads: dict) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p -= self.rates[k] * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _sample_color(view, camera, points):
    u, v, _ = camera.project(points)
    k = camera.intrinsics
    col = np.clip(np.rint(u), 0, k.width - 1).astype(np.int64)
    row = np.clip(np.rint(v), 0, k.height - 1).astype(np.int64)
    on = view.silhouette[row, col]
    return view.color[row, col], on


def initialize_from_hull(hull: VisualHull, views, cameras, n_gaussians: int, seed: int = 0,
                         opacity: float = 0.3) -> GaussianCloud:
    """Gaussians on the hull surface, colored from the view that faces each point best."""
    stride = 1
    points, normals = hull_to_point_cloud(hull, 1)
    while len(points) > 4 * n_gaussians:
        stride += 1
        points, normals = hull_to_point_cloud(hull, stride)
    if len(points) == 0:
        raise EmptyHull("hull has no surface voxels")
    rng = np.random.default_rng(seed)
    if len(points) > n_gaussians:
        pick = np.sort(rng.choice(len(points), n_gaussians, replace=False))
        points, normals = points[pick], normals[pick]
    n = len(points)
    if n > 1:
        kk = min(4, n)
        dist, _ = cKDTree(points).query(points, k=kk)
        nn = dist[:, 1:].mean(axis=1)
    else:
        nn = np.full(1, hull.voxel_size * stride)
    scale = np.clip(nn, 0.5 * hull.voxel_size, None) * 0.5
    colors = np.full((n, 3), 0.5)
    facing = np.full(n, -np.inf)
    for view, cam in zip(views, cameras):
        c, on = _sample_color(view, cam, points)
        f = -normals @ cam.axis
        better = on & (f > facing)
        colors[better] = c[better]
        facing[better] = f[better]
    lo = hull.origin
    hi = hull.origin + np.array(hull.dims) * hull.voxel_size
    cloud = GaussianCloud.create(points, scale[:, None], opacity, colors, bounds=(lo, hi))
    cloud.meta["stride"] = stride
    return cloud


@dataclass
class FitResult:
    cloud: GaussianCloud
    log: list  # rows matching LOG_COLUMNS
    config: FitConfig


class _Problem:
    """Per-view targets shared by every iteration."""

    def __init__(self, views, cameras, hull, config: FitConfig):
        self.cameras = list(cameras)
        self.config = config
        self.settings = RenderSettings(alpha_min=config.alpha_min)
        self.targets = []
        for view, cam in zip(views, self.cameras):
            k = cam.intrinsics
            if view.shape != (k.height, k.width):
                raise ShapeMismatch("view resolution differs from its camera")
            ref = loss_region(view.color, view.silhouette, config.region, BACKGROUND_COLOR)
            mask = view.validity
            # depth targets only on the reference foreground, like the color terms
            hd = np.where(view.silhouette, hull_depth(hull, cam, back=config.back_face), np.inf)
            self.targets.append((ref, mask, hd))

    def view_loss(self, cloud: GaussianCloud, i: int):
        cam = self.cameras[i]
        ref, mask, hd = self.targets[i]
        cfg = self.config
        out = render(cloud, cam, self.settings)
        color = out.composite(BACKGROUND_COLOR)
        depth = out.depth
        if cfg.depth_mode == "expected":
            a = np.maximum(out.alpha, 1e-6)
            depth = out.depth / a
        terms, d_color, d_depth = combined_loss(color, depth, ref, mask, hd, cfg.weights,
                                                cfg.sign, cfg.temperature)
        # composite = C + (1 - alpha) * background
        d_alpha = -(d_color @ np.asarray(BACKGROUND_COLOR, dtype=float))
        if cfg.depth_mode == "expected":
            d_alpha = d_alpha - np.where(out.alpha > 1e-6, d_depth * depth / a, 0.0)
            d_depth = d_depth / a
        grads = render_backward(cloud, cam, out, d_color, d_depth, d_alpha)
        return terms, grads


def fit(views, cameras, hull: VisualHull, config: FitConfig | None = None,
        init: GaussianCloud | None = None, callback=None) -> FitResult:
    """Optimize a Gaussian cloud against reference views with hull-depth regularization."""
    config = config or FitConfig()
    if len(views) != len(cameras) or not views:
        raise ShapeMismatch("need one camera per reference view")
    if hull.occupied == 0:
        raise EmptyHull("cannot fit against an empty hull")
    cloud = init.copy() if init is not None else initialize_from_hull(
        hull, views, cameras, config.n_gaussians, config.seed, config.init_opacity)
    if config.iterations == 0:
        return FitResult(cloud, [], config)
    problem = _Problem(views, cameras, hull, config)
    extent = float(np.max(np.array(hull.dims)) * hull.voxel_size)
    rates = dict(default_learning_rates(extent))
    rates.update(config.learning_rates or {})
    opt = Adam(cloud.params(), rates)
    rng = np.random.default_rng(config.seed + 1)
    queue: list = []
    log = []
    lo, hi = (np.asarray(b) for b in cloud.bounds) if cloud.bounds is not None else (None, None)
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 and config.views_per_step > 1 else None
    try:
        for it in range(1, config.iterations + 1):
            batch = []
            while len(batch) < config.views_per_step:
                if not queue:
                    queue = list(rng.permutation(len(views)))
                batch.append(int(queue.pop(0)))
            if pool is not None:
                results = list(pool.map(lambda i: problem.view_loss(cloud, i), batch))
            else:
                results = [problem.view_loss(cloud, i) for i in batch]
            nb = len(batch)
            terms = LossTerms(*(sum(getattr(r[0], f) for r in results) / nb
                                for f in ("l1", "dssim", "depth", "total")))
            if not np.isfinite(terms.total):
                raise Diverged(f"loss became {terms.total} at iteration {it}")
            grads = {}
            for name in GaussianCloud.PARAMS:
                acc = results[0][1][name].copy()
                for r in results[1:]:
                    acc += r[1][name]
                grads[name] = acc / nb
            opt.step(cloud.params(), grads)
            if lo is not None:
                c, half = 0.5 * (lo + hi), (hi - lo)  # keep centers within twice the bounds
                np.clip(cloud.means, c - half, c + half, out=cloud.means)
            if not all(np.all(np.isfinite(getattr(cloud, p))) for p in GaussianCloud.PARAMS):
                raise Diverged(f"parameters became non-finite at iteration {it}")
            if it % config.log_every == 0 or it == config.iterations:
                log.append((it, terms.l1, terms.dssim, terms.depth, terms.total))
            if callback is not None:
                callback(it, terms, cloud)
    finally:
        if pool is not None:
            pool.shutdown()
    return FitResult(cloud, log, config)


def write_log(path, rows):
    from ..imaging_io import write_csv

    return write_csv(path, LOG_COLUMNS, rows)


def render_eval(cloud: GaussianCloud, camera, background=BACKGROUND_COLOR) -> np.ndarray:
    """Color image composited over the background for comparison with simulated views."""
    out = render(cloud, camera)
    return np.clip(out.composite(background), 0.0, 1.0)


def evaluate(cloud: GaussianCloud, views, cameras) -> list:
    """Per-view ``(psnr, ssim)`` of cloud renders against held-out views."""
    rows = []
    for view, cam in zip(views, cameras):
        img = render_eval(cloud, cam)
        rows.append((psnr(img, view.color), ssim(img, view.color)))
    return rows
