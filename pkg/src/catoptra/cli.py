"""Command line: ``catoptra <subcommand> --out DIR [options]``.

Exit codes: 0 success, 2 user error (bad arguments, config or inputs,
infeasible designs), 3 pipeline error (a stage failed on valid inputs).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import imaging_io as io
from . import pipeline as pl
from .errors import (CatoptraError, ConditionViolation, DegenerateFov, InfeasibleAngles, ParseError,
                     SceneTooLarge)

EXIT_OK, EXIT_USER, EXIT_PIPELINE = 0, 2, 3
USER_ERRORS = (ParseError, ConditionViolation, SceneTooLarge, DegenerateFov, InfeasibleAngles)


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USER)


def _common(p):
    p.add_argument("--out", required=True, type=Path, help="output root; every path is relative to it")
    p.add_argument("--config", type=Path, help="pipeline config JSON (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker cap (default: CATOPTRA_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="catoptra", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("design", help="mirror pair for a scene box and sensor")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--scene-box", nargs=3, type=float, metavar=("WIDTH", "LENGTH", "HEIGHT"), required=True)
    p.add_argument("--max-beam-width", type=float, required=True)
    p.add_argument("--alpha1", type=float, default=60.0, help="inner mirror tilt, degrees")
    p.add_argument("--alpha2-max", type=float, default=pl.ALPHA2_MAX_DEG, help="outer tilt ceiling, degrees")
    p.add_argument("--d1-ratio", type=float, default=0.05)
    p.add_argument("--h2-margin", type=float, default=1.05)
    p.add_argument("--d2-margin", type=float, default=1.05)

    p = sub.add_parser("check", help="report the design conditions of a lens file")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--lens", required=True, type=Path)

    p = sub.add_parser("simulate", help="snapshot, reference views and held-out views")
    _common(p)
    p.add_argument("--scene", help="scene JSON or a bundled name (sphere, l_shape)")
    p.add_argument("--lens", type=Path)
    p.add_argument("--resolution", type=int)
    p.add_argument("--views", type=int, help="number of held-out views (default 24)")

    p = sub.add_parser("carve", help="visual hull from the reference silhouettes")
    _common(p)
    p.add_argument("--resolution", type=int)

    p = sub.add_parser("vhdepth", help="hull depth maps for the reference cameras")
    _common(p)
    p.add_argument("--back-face", action="store_true")

    p = sub.add_parser("fit", help="optimize Gaussians against the reference views")
    _common(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--gaussians", type=int)
    p.add_argument("--no-depth-loss", action="store_true")

    p = sub.add_parser("eval", help="PSNR and SSIM on the held-out views")
    _common(p)

    p = sub.add_parser("report", help="summarize a run or run the depth-loss ablation")
    _common(p)
    p.add_argument("--ablation", "--no-depth-loss", dest="ablation", action="store_true",
                   help="fit and evaluate with and without the depth term, report the difference")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--iterations", type=int)
    p.add_argument("--gaussians", type=int)
    return parser


def _config(args) -> pl.PipelineConfig:
    """Defaults < earlier resolved config in --out < --config file < flags."""
    if args.config is not None:
        cfg = pl.PipelineConfig.load(args.config)
    else:
        prior = args.out / "simulate" / "config.json"
        cfg = pl.PipelineConfig.load(prior) if prior.exists() else pl.PipelineConfig.from_dict()
    fit = dict(cfg.data["fit"])
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
        fit["seed"] = args.seed
    for flag, key in (("iterations", "iterations"), ("gaussians", "n_gaussians")):
        if getattr(args, flag, None) is not None:
            fit[key] = getattr(args, flag)
    if getattr(args, "no_depth_loss", False):
        fit["weights"] = dict(fit["weights"], depth=0.0)
    over["fit"] = fit
    if getattr(args, "scene", None) is not None:
        over["scene"] = args.scene
    if getattr(args, "lens", None) is not None:
        over["lens"] = io.read_json(args.lens)
    if getattr(args, "views", None) is not None:
        over["simulate.held_out"] = args.views
    if getattr(args, "resolution", None) is not None:
        over["simulate.resolution" if args.command == "simulate" else "carve.resolution"] = args.resolution
    try:
        return cfg.with_overrides(over)
    except ValueError as exc:
        raise UserError(str(exc)) from None


def _say(msg):
    print(msg, flush=True)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out
    if args.command == "design":
        res = pl.run_design(args.scene_box, args.max_beam_width, args.alpha1, args.alpha2_max,
                            args.d1_ratio, args.h2_margin, args.d2_margin)
        for w in res.warnings:
            io.warn(w)
        pl.cmd_design(out, res, args.scene_box)
        sys.stdout.write(pl.format_design_report(res.report))
        return EXIT_OK
    if args.command == "check":
        from .lens import MirrorPairConfig, check_conditions

        try:
            lens = MirrorPairConfig.from_dict(io.read_json(args.lens))
        except ValueError as exc:
            raise UserError(f"{args.lens}: {exc}") from None
        report = check_conditions(lens)
        stage = pl.Stage(out, "check")
        stage.add(io.write_json(stage.path("conditions.json"), report.to_dict()))
        stage.finish()
        for r in report.results:
            _say(f"condition {r.name:<10} {'ok' if r.passed else 'VIOLATED'} (margin {r.margin:.3g})")
        return EXIT_OK if report.ok else EXIT_USER

    cfg = _config(args)
    if args.command == "simulate":
        m = pl.cmd_simulate(out, cfg)
        _say(f"simulate: {len(m['files'])} files in {out / 'simulate'}")
    elif args.command == "carve":
        pl.cmd_carve(out, cfg)
        _say(io.read_json(out / "carve" / "summary.json"))
    elif args.command == "vhdepth":
        m = pl.cmd_vhdepth(out, cfg, back=args.back_face)
        _say(f"vhdepth: {len(m['files'])} files")
    elif args.command == "fit":
        pl.cmd_fit(out, cfg, log=_say, threads=pl.thread_count(args.threads))
    elif args.command == "eval":
        s = pl.cmd_eval(out, cfg)
        _say(f"held-out mean PSNR {s['mean_psnr']:.4f} dB, mean SSIM {s['mean_ssim']:.5f} over {s['views']} views")
    elif args.command == "report":
        if args.seeds < 1:
            raise UserError("--seeds must be >= 1")
        pl.cmd_report(out, cfg, ablation=args.ablation, seeds=args.seeds, log=_say,
                      threads=pl.thread_count(args.threads))
        sys.stdout.write((out / "report" / "report.txt").read_text())
    return EXIT_OK


def main(argv=None) -> int:
    try:
        code = run(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USER
    except (UserError, *USER_ERRORS, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_USER
    except CatoptraError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_PIPELINE
    return code


if __name__ == "__main__":
    sys.exit(main())
