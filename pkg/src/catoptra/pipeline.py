"""Stage functions behind the command line: design, simulate, carve, fit, eval, report.

Every stage writes into its own sub-directory of the output root, records
the fully resolved configuration next to its outputs and lists every
artifact with its SHA-256 in ``manifest.json``.
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import imaging_io as io
from .errors import CatoptraError, ParseError
from .hull import VisualHull, carve, hull_depth, hull_to_point_cloud, read_hull, write_hull
from .lens import (DesignMargins, MirrorPairConfig, SceneBox, SensorSpec, check_conditions,
                   design_lens, min_d2, min_h2, optimal_delta_alpha, pair_profile,
                   viewing_volume)
from .raysim import RenderedView, mosaic_to_views, render_snapshot, render_view
from .scene import Scene, load_scene
from .unfolding import CameraPose, Intrinsics, VirtualCameraRig, build_rig, default_real_camera, ring_poses

CONFIG_VERSION = 1
ALPHA2_MAX_DEG = 85.0
NARROW_FOV_DEG = 30.0  # full apex angles below this get a coverage warning

DEFAULTS = {
    "version": CONFIG_VERSION,
    "scene": "sphere",
    "lens": None,
    "design": None,
    "seed": 0,
    "simulate": {
        "resolution": 128,
        "held_out": 24,
        "mosaic_scale": 4,
        "mosaic_samples": 2,
        "reproject_samples": 4,
        "render_samples": 2,
        "reference_source": "mosaic",
    },
    "carve": {"resolution": 96, "dilation": 1.0, "bounds": None, "padding": 0.2},
    "fit": {},
}

DESIGN_KEYS = {"scene_box", "max_beam_width", "alpha1_deg", "alpha2_max_deg", "d1_ratio",
               "h2_margin", "d2_margin"}


def data_path(name: str) -> Path:
    return Path(str(resources.files("catoptra") / "data" / name))


BUNDLED_SCENES = {"sphere": "sphere.json", "l_shape": "l_shape.json"}


def reference_lens() -> MirrorPairConfig:
    """Design-(b)-style pair (60/85 degrees) sized for a desk-scale scene near the origin."""
    base = MirrorPairConfig.from_degrees(60.0, 85.0, 1.0, 1.0, 0.05, 1.0)
    return base.replace(h2=1.05 * min_h2(base), d2=base.d1 + 1.05 * (min_d2(base) - base.d1))


def _merge(base: dict, extra: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if key not in base:
            raise ValueError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "fit":
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class PipelineConfig:
    data: dict

    @classmethod
    def from_dict(cls, d: dict | None = None) -> "PipelineConfig":
        from .splat.fit import FitConfig

        merged = _merge(DEFAULTS, d or {}, "")
        if merged["version"] != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {merged['version']}")
        if merged["lens"] is not None:
            MirrorPairConfig.from_dict(merged["lens"])
        if merged["design"] is not None:
            unknown = set(merged["design"]) - DESIGN_KEYS
            if unknown:
                raise ValueError(f"unknown design keys {sorted(unknown)}")
        sim = merged["simulate"]
        if sim["reference_source"] not in ("mosaic", "direct"):
            raise ValueError("simulate.reference_source must be 'mosaic' or 'direct'")
        for key in ("resolution", "mosaic_scale", "mosaic_samples", "reproject_samples",
                    "render_samples"):
            if int(sim[key]) < 1:
                raise ValueError(f"simulate.{key} must be >= 1")
        if int(sim["held_out"]) < 0:
            raise ValueError("simulate.held_out must be >= 0")
        fit = dict(merged["fit"])
        fit.setdefault("seed", merged["seed"])
        merged["fit"] = FitConfig.from_dict(fit).to_dict()
        return cls(merged)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_dict(io.read_json(path))
        except ValueError as exc:
            raise ParseError(str(exc), path) from None

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        d = self.to_dict()
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = d
            parts = dotted.split(".")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = value
        return PipelineConfig.from_dict(d)

    def fit_config(self):
        from .splat.fit import FitConfig

        return FitConfig.from_dict(self.data["fit"])


# -- artifacts -------------------------------------------------------------------------


class Stage:
    """Collects the files one stage writes and emits its manifest."""

    def __init__(self, root, name: str, config: PipelineConfig | None = None):
        self.root = Path(root)
        self.dir = self.root / name
        self.dir.mkdir(parents=True, exist_ok=True)
        self.name = name
        self.files: list[Path] = []
        if config is not None:
            self.add(io.write_json(self.dir / "config.json", config.to_dict()))

    def add(self, *paths):
        for p in paths:
            if isinstance(p, (tuple, list)):
                self.add(*p)
            else:
                self.files.append(Path(p))
        return paths[0] if len(paths) == 1 else paths

    def path(self, rel: str) -> Path:
        return self.dir / rel

    def finish(self) -> dict:
        entries = {p.relative_to(self.root).as_posix(): io.sha256_file(p) for p in sorted(set(self.files))}
        manifest = {"stage": self.name, "files": entries}
        io.write_json(self.dir / "manifest.json", manifest)
        _update_root_manifest(self.root)
        return manifest


def _update_root_manifest(root: Path) -> None:
    stages = {}
    for m in sorted(root.rglob("manifest.json")):
        if m.parent != root:
            stages[m.parent.relative_to(root).as_posix()] = io.read_json(m)["files"]
    io.write_json(root / "manifest.json", {"stages": stages})


def manifest_digest(root) -> str:
    """One hash over every stage manifest (the run's fingerprint)."""
    import hashlib

    data = io.read_json(Path(root) / "manifest.json")
    blob = repr(sorted((s, sorted(f.items())) for s, f in data["stages"].items()))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_view(stage: Stage, prefix: str, view: RenderedView) -> None:
    stage.add(io.write_png(stage.path(prefix + ".png"), view.color))
    stage.add(io.write_mask_png(stage.path(prefix + "_silhouette.png"), view.silhouette))
    stage.add(io.write_mask_png(stage.path(prefix + "_valid.png"), view.validity))
    stage.add(io.write_depth(stage.path(prefix + "_depth.pfm"), view.depth))


def read_view(directory: Path, prefix: str) -> RenderedView:
    color = io.read_png(directory / (prefix + ".png"), float_image=True)
    sil = io.read_mask_png(directory / (prefix + "_silhouette.png"))
    valid = io.read_mask_png(directory / (prefix + "_valid.png"))
    depth = io.read_depth(directory / (prefix + "_depth.pfm"))
    return RenderedView(color, depth, sil & valid, valid)


def write_cameras(path, cameras) -> Path:
    k = cameras[0].intrinsics
    return io.write_json(path, {"version": 1, "model": k.model, "intrinsics": k.to_dict(),
                                "cameras": [c.to_dict(f"view_{i:02d}") for i, c in enumerate(cameras)]})


def read_cameras(path) -> list:
    d = io.read_json(path)
    try:
        k = Intrinsics.from_dict(d["intrinsics"])
        return [CameraPose.from_dict(c, k) for c in d["cameras"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed camera file: {exc}", path) from None


# -- design ----------------------------------------------------------------------------


@dataclass
class DesignResult:
    lens: MirrorPairConfig
    report: dict
    warnings: list


def run_design(scene_box, max_beam_width: float, alpha1_deg: float = 60.0,
               alpha2_max_deg: float = ALPHA2_MAX_DEG, d1_ratio: float = 0.05,
               h2_margin: float = 1.05, d2_margin: float = 1.05) -> DesignResult:
    """Lens for a scene box, clamping the outer tilt at ``alpha2_max_deg``."""
    box = SceneBox(*scene_box)
    sensor = SensorSpec(max_beam_width)
    margins = DesignMargins(math.radians(alpha1_deg), d1_ratio, h2_margin, d2_margin)
    warnings = []
    da_opt = optimal_delta_alpha(box, sensor)
    da = da_opt
    a2_max = math.radians(alpha2_max_deg)
    if margins.alpha1 + da > a2_max:
        da = a2_max - margins.alpha1
        if da <= 0:
            from .errors import InfeasibleAngles

            raise InfeasibleAngles(f"alpha1 = {alpha1_deg:g} deg leaves no room below alpha2 = {alpha2_max_deg:g} deg")
        warnings.append(f"alpha2 clamped to {alpha2_max_deg:g} deg: delta alpha {math.degrees(da):.4f} deg "
                        f"instead of the inscribing {math.degrees(da_opt):.4f} deg; the scene box is not fully "
                        f"covered")
    cfg = design_lens(box, sensor, margins, delta_alpha=da)
    vol = viewing_volume(cfg)
    if math.degrees(vol.apex_fov) < NARROW_FOV_DEG:
        warnings.append(f"narrow field of view ({math.degrees(vol.apex_fov):.2f} deg): side views "
                        f"cover less of the object's sides")
    report = {
        "scene_box": {"width": box.width, "length": box.length, "height": box.height},
        "max_beam_width": max_beam_width,
        "delta_alpha_deg": math.degrees(cfg.delta_alpha),
        "optimal_delta_alpha_deg": math.degrees(da_opt),
        "lens": cfg.to_dict(),
        "conditions": check_conditions(cfg).to_dict(),
        "viewing_volume": {"theta_deg": math.degrees(vol.theta), "beta_deg": math.degrees(vol.beta),
                           "base_length": vol.base_length, "beam_width": vol.beam_width,
                           "height": vol.height},
        "warnings": warnings,
    }
    return DesignResult(cfg, report, warnings)


def format_design_report(report: dict) -> str:
    vv = report["viewing_volume"]
    lens = report["lens"]
    lines = [
        f"delta alpha      {report['delta_alpha_deg']:.4f} deg (inscribing optimum {report['optimal_delta_alpha_deg']:.4f} deg)",
        f"alpha1, alpha2   {lens['alpha1_deg']:.4f}, {lens['alpha2_deg']:.4f} deg",
        f"h1, h2           {lens['h1']:.6g}, {lens['h2']:.6g}",
        f"d1, d2           {lens['d1']:.6g}, {lens['d2']:.6g}",
        f"apex angle       {vv['theta_deg']:.4f} deg (half), base length {vv['base_length']:.6g}",
        f"beam width       {vv['beam_width']:.6g}, volume height {vv['height']:.6g}",
    ]
    for name, c in report["conditions"].items():
        lines.append(f"condition {name:<10} {'ok' if c['passed'] else 'VIOLATED'} (margin {c['margin']:.3g})")
    lines += [f"warning: {w}" for w in report["warnings"]]
    return "\n".join(lines) + "\n"


def cross_section_svg(cfg: MirrorPairConfig, scene_box=None, size: int = 600) -> str:
    """Cross-section through two opposite mirror pairs with the viewing volume."""
    prof = pair_profile(cfg)
    vol = viewing_volume(cfg)
    half_l, half_h = vol.base_length / 2.0, vol.height / 2.0
    xs = [prof.A[0], prof.B[0], prof.C[0], prof.D[0], half_l]
    zs = [prof.A[1], prof.B[1], prof.C[1], prof.D[1], half_h, -half_h]
    r_max = max(xs) * 1.1
    z_lo, z_hi = min(zs) - 0.05 * r_max, max(zs) + 0.15 * r_max
    scale = size / max(2 * r_max, z_hi - z_lo)
    width = 2 * r_max * scale
    height = (z_hi - z_lo) * scale

    def pt(r, z):
        return f"{(r + r_max) * scale:.3f},{(z_hi - z) * scale:.3f}"

    def line(p, q, style):
        return f'<line x1="{pt(*p).split(",")[0]}" y1="{pt(*p).split(",")[1]}" ' \
               f'x2="{pt(*q).split(",")[0]}" y2="{pt(*q).split(",")[1]}" {style}/>'

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
           f'viewBox="0 0 {width:.3f} {height:.3f}">',
           '<rect width="100%" height="100%" fill="white"/>']
    out.append(line((0, z_lo), (0, z_hi), 'stroke="#999" stroke-dasharray="4,4"'))
    rh = [(-half_l, 0.0), (0.0, half_h), (half_l, 0.0), (0.0, -half_h)]
    out.append('<polygon points="' + " ".join(pt(*p) for p in rh) +
               '" fill="#cfe8ff" stroke="#36c" stroke-width="1"/>')
    if scene_box is not None:
        box = SceneBox(*scene_box)
        hl, hh = box.length / 2, box.height / 2
        out.append('<polygon points="' + " ".join(pt(*p) for p in [(-hl, -hh), (hl, -hh), (hl, hh), (-hl, hh)]) +
                   '" fill="none" stroke="#c33" stroke-width="1.5"/>')
    for sgn in (1, -1):
        def m(p):
            return (sgn * float(p[0]), float(p[1]))
        out.append(line(m(prof.A), m(prof.B), 'stroke="black" stroke-width="3"'))
        out.append(line(m(prof.C), m(prof.D), 'stroke="black" stroke-width="3"'))
        # central ray: down onto M1, across to M2, out through the axis
        p1 = (prof.A + prof.B) / 2.0
        e1 = np.array([math.sin(2 * cfg.alpha1), math.cos(2 * cfg.alpha1)])
        m2 = prof.D - prof.C
        s, _ = np.linalg.solve(np.column_stack([e1, -m2]), prof.C - p1)
        p2 = p1 + s * e1
        t_axis = -p2[0] / prof.exit_dir[0]
        p3 = p2 + t_axis * prof.exit_dir
        style = 'stroke="#e80" stroke-width="1.2"'
        out.append(line(m((p1[0], z_hi)), m(p1), style))
        out.append(line(m(p1), m(p2), style))
        out.append(line(m(p2), m(p3), style))
    out.append(f'<text x="8" y="18" font-family="sans-serif" font-size="13">alpha1 {cfg.alpha1_deg:.2f} deg, '
               f'alpha2 {cfg.alpha2_deg:.2f} deg, apex angle {math.degrees(vol.apex_fov):.2f} deg</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_design(out_root, result: DesignResult, scene_box=None) -> dict:
    stage = Stage(out_root, "design")
    stage.add(io.write_json(stage.path("lens.json"), result.lens.to_dict()))
    stage.add(io.write_json(stage.path("report.json"), result.report))
    stage.add(io.atomic_write_text(stage.path("report.txt"), format_design_report(result.report)))
    stage.add(io.atomic_write_text(stage.path("cross_section.svg"), cross_section_svg(result.lens, scene_box)))
    return stage.finish()


# -- simulate --------------------------------------------------------------------------


def resolve_scene(spec: str) -> Scene:
    if spec in BUNDLED_SCENES:
        return load_scene(data_path(BUNDLED_SCENES[spec]))
    return load_scene(spec)


def resolve_lens(config: PipelineConfig) -> MirrorPairConfig:
    d = config.data
    if d["lens"] is not None:
        return MirrorPairConfig.from_dict(d["lens"])
    if d["design"] is not None:
        des = dict(d["design"])
        box = des.pop("scene_box")
        width = des.pop("max_beam_width")
        return run_design(box, width, **des).lens
    return reference_lens()


def make_rig(config: PipelineConfig, lens: MirrorPairConfig) -> VirtualCameraRig:
    sim = config.data["simulate"]
    res = int(sim["resolution"])
    prof = pair_profile(lens)
    focal = res / (1.05 * float(prof.B[0] - prof.A[0]))
    real = default_real_camera(lens, focal * int(sim["mosaic_scale"]))
    return build_rig(lens, resolution=res, real_camera=real)


def cmd_simulate(out_root, config: PipelineConfig) -> dict:
    sim = config.data["simulate"]
    stage = Stage(out_root, "simulate", config)
    scene = resolve_scene(config.data["scene"])
    lens = resolve_lens(config)
    rig = make_rig(config, lens)
    stage.add(io.write_json(stage.path("lens.json"), lens.to_dict()))
    stage.add(write_cameras(stage.path("cameras.json"), rig.cameras))
    stage.add(io.write_json(stage.path("rig.json"), rig.to_dict()))
    stage.add(io.write_json(stage.path("scene.json"), scene.to_dict()))

    mosaic = render_snapshot(rig, scene, samples=int(sim["mosaic_samples"]))
    stage.add(io.write_png(stage.path("mosaic.png"), mosaic.color))
    stage.add(io.write_label_png(stage.path("multiview_mask.png"), mosaic.multiview_mask))
    stage.add(io.write_depth(stage.path("mosaic_depth.pfm"), mosaic.depth))

    if sim["reference_source"] == "mosaic":
        refs = mosaic_to_views(mosaic, rig, samples=int(sim["reproject_samples"]))
    else:
        refs = [render_view(c, scene, int(sim["render_samples"])) for c in rig.cameras]
    for k, v in enumerate(refs):
        write_view(stage, f"reference/view_{k:02d}", v)

    poses = ring_poses(rig, int(sim["held_out"])) if int(sim["held_out"]) else []
    if poses:
        stage.add(write_cameras(stage.path("held_out_cameras.json"), poses))
    for k, cam in enumerate(poses):
        write_view(stage, f"held_out/view_{k:02d}", render_view(cam, scene, int(sim["render_samples"])))
    return stage.finish()


def load_views(out_root, split: str = "reference"):
    sdir = Path(out_root) / "simulate"
    cams_file = "cameras.json" if split == "reference" else "held_out_cameras.json"
    if not (sdir / cams_file).exists():
        raise ParseError(f"missing {cams_file}; run simulate first", sdir / cams_file)
    cams = read_cameras(sdir / cams_file)
    views = [read_view(sdir, f"{split}/view_{k:02d}") for k in range(len(cams))]
    return views, cams


# -- carve / vhdepth -------------------------------------------------------------------


def hull_bounds(config: PipelineConfig, out_root):
    c = config.data["carve"]
    if c["bounds"] is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in c["bounds"])
        return lo, hi
    scene = resolve_scene(config.data["scene"])
    lo, hi = scene.bounds()
    pad = float(c["padding"]) * float(np.max(hi - lo))
    return lo - pad, hi + pad


def cmd_carve(out_root, config: PipelineConfig) -> dict:
    c = config.data["carve"]
    stage = Stage(out_root, "carve", config)
    views, cams = load_views(out_root)
    bounds = hull_bounds(config, out_root)
    hull = carve(views, cams, bounds, int(c["resolution"]), float(c["dilation"]))
    stage.add(write_hull(stage.path("hull.raw"), hull))
    pts, normals = hull_to_point_cloud(hull)
    stage.add(io.write_xyz(stage.path("hull_points.xyz"), pts, normals))
    stage.add(io.write_json(stage.path("summary.json"), {
        "dims": list(hull.dims), "voxel_size": hull.voxel_size, "occupied": hull.occupied,
        "volume": hull.volume, "surface_points": int(len(pts))}))
    return stage.finish()


def load_hull(out_root) -> VisualHull:
    p = Path(out_root) / "carve" / "hull.raw"
    if not p.exists():
        raise ParseError("missing hull; run carve first", p)
    return read_hull(p)


def cmd_vhdepth(out_root, config: PipelineConfig, back: bool = False) -> dict:
    stage = Stage(out_root, "vhdepth", config)
    hull = load_hull(out_root)
    _, cams = load_views(out_root)
    for k, cam in enumerate(cams):
        stage.add(io.write_depth(stage.path(f"view_{k:02d}_hull_depth.pfm"), hull_depth(hull, cam, back)))
    return stage.finish()


# -- fit / eval ------------------------------------------------------------------------


def cmd_fit(out_root, config: PipelineConfig, name: str = "fit", log=None,
            threads: int | None = None) -> dict:
    from .splat import fit, write_cloud, write_log

    stage = Stage(out_root, name, config)
    views, cams = load_views(out_root)
    hull = load_hull(out_root)
    fc = config.fit_config()
    if threads is not None:  # runtime only: results do not depend on it
        fc.threads = threads
    every = max(1, fc.iterations // 10)

    def progress(it, terms, cloud):
        if log is not None and (it % every == 0 or it == fc.iterations):
            log(f"[{name}] iteration {it}/{fc.iterations} loss {terms.total:.6f}")

    result = fit(views, cams, hull, fc, callback=progress)
    stage.add(write_cloud(stage.path("cloud.ply"), result.cloud))
    stage.add(write_log(stage.path("loss.csv"), result.log))
    return stage.finish()


def evaluate_cloud(cloud, views, cams):
    from .splat import evaluate

    return evaluate(cloud, views, cams)


def cmd_eval(out_root, config: PipelineConfig, fit_name: str = "fit", name: str = "eval",
             save_renders: bool = True) -> dict:
    from .splat import read_cloud, render_eval

    stage = Stage(out_root, name, config)
    cloud_path = Path(out_root) / fit_name / "cloud.ply"
    if not cloud_path.exists():
        raise ParseError("missing cloud; run fit first", cloud_path)
    cloud = read_cloud(cloud_path)
    views, cams = load_views(out_root, "held_out")
    if not views:
        raise CatoptraError("no held-out views to evaluate")
    rows = evaluate_cloud(cloud, views, cams)
    stage.add(io.write_csv(stage.path("metrics.csv"), ("view", "psnr", "ssim"),
                           [(k, p, s) for k, (p, s) in enumerate(rows)]))
    summary = {"views": len(rows), "mean_psnr": float(np.mean([r[0] for r in rows])),
               "mean_ssim": float(np.mean([r[1] for r in rows]))}
    stage.add(io.write_json(stage.path("summary.json"), summary))
    if save_renders:
        for k, cam in enumerate(cams):
            stage.add(io.write_png(stage.path(f"renders/view_{k:02d}.png"), render_eval(cloud, cam)))
    stage.finish()
    return summary


def cmd_report(out_root, config: PipelineConfig, ablation: bool = False, seeds: int = 1,
               log=None, threads: int | None = None) -> dict:
    """Summarize an evaluated run, or run the depth-loss ablation over ``seeds`` seeds."""
    root = Path(out_root)
    if not ablation:
        summary_path = root / "eval" / "summary.json"
        if not summary_path.exists():
            raise ParseError("missing eval summary; run eval first", summary_path)
        summary = io.read_json(summary_path)
        stage = Stage(root, "report", config)
        text = f"held-out views {summary['views']}: mean PSNR {summary['mean_psnr']:.4f} dB, " \
               f"mean SSIM {summary['mean_ssim']:.5f}\n"
        stage.add(io.atomic_write_text(stage.path("report.txt"), text))
        stage.add(io.write_json(stage.path("report.json"), summary))
        stage.finish()
        return summary
    base_fit = config.data["fit"]
    arms = {"with_depth": base_fit["weights"]["depth"], "without_depth": 0.0}
    if arms["with_depth"] == 0.0:
        arms["with_depth"] = 0.5
    results = {}
    for arm, lam in arms.items():
        psnrs, ssims = [], []
        for s in range(seeds):
            seed = int(config.data["seed"]) + s
            fit_d = copy.deepcopy(base_fit)
            fit_d["weights"]["depth"] = lam
            fit_d["seed"] = seed
            cfg = config.with_overrides({"fit": fit_d, "seed": seed})
            tag = f"ablation/{arm}_seed{seed}"
            cmd_fit(root, cfg, name=f"{tag}/fit", log=log, threads=threads)
            summ = cmd_eval(root, cfg, fit_name=f"{tag}/fit", name=f"{tag}/eval", save_renders=False)
            psnrs.append(summ["mean_psnr"])
            ssims.append(summ["mean_ssim"])
        results[arm] = {"lambda_depth": lam, "psnr": psnrs, "ssim": ssims,
                        "mean_psnr": float(np.mean(psnrs)), "mean_ssim": float(np.mean(ssims))}
    delta = results["with_depth"]["mean_psnr"] - results["without_depth"]["mean_psnr"]
    report = {"seeds": seeds, "arms": results, "delta_psnr": delta,
              "delta_ssim": results["with_depth"]["mean_ssim"] - results["without_depth"]["mean_ssim"]}
    stage = Stage(root, "report", config)
    text = "\n".join(
        [f"{arm:<14} lambda_depth={r['lambda_depth']:g}  mean PSNR {r['mean_psnr']:.4f} dB  "
         f"mean SSIM {r['mean_ssim']:.5f}  per seed {', '.join(f'{p:.3f}' for p in r['psnr'])}"
         for arm, r in results.items()]
        + [f"delta (with - without)  PSNR {delta:+.4f} dB  SSIM {report['delta_ssim']:+.5f}"]) + "\n"
    stage.add(io.atomic_write_text(stage.path("report.txt"), text))
    stage.add(io.write_json(stage.path("report.json"), report))
    stage.finish()
    return report


def thread_count(flag: int | None) -> int:
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get("CATOPTRA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"CATOPTRA_THREADS must be an integer, got {env!r}") from None
    return 1
