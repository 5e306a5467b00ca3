"""Compiled core vs numpy fallback on the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat N] [--resolution PX]

Each case runs through the public API with the backend swapped underneath,
checks that both backends agree, and prints the best-of-N wall times.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from catoptra import kernels
from catoptra.hull import carve, hull_depth
from catoptra.pipeline import data_path, reference_lens
from catoptra.raysim import render_snapshot, render_view, render_virtual_views
from catoptra.scene import load_scene, sphere_scene
from catoptra.splat.fit import initialize_from_hull
from catoptra.splat.render import render, render_backward
from catoptra.unfolding import build_rig


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def _flat(x):
    if isinstance(x, dict):
        return np.concatenate([np.ravel(x[k]) for k in sorted(x)])
    if hasattr(x, "color"):
        return np.concatenate([np.ravel(x.color), np.ravel(np.nan_to_num(x.depth, posinf=0.0))])
    return np.ravel(np.nan_to_num(np.asarray(x, dtype=float), posinf=0.0))


def cases(resolution: int):
    rig = build_rig(reference_lens(), resolution=resolution)
    cam = rig.cameras[0]
    lshape = load_scene(data_path("l_shape.json"))
    sphere = sphere_scene(0.1)
    refs, _, _ = render_virtual_views(rig, sphere, held_out=0)
    hull = carve(refs, rig.cameras, (np.full(3, -0.15), np.full(3, 0.15)), 64)
    cloud = initialize_from_hull(hull, refs, rig.cameras, 1000)
    out = render(cloud, cam)
    rng = np.random.default_rng(0)
    dc = rng.normal(size=out.color.shape)
    dd = rng.normal(size=out.depth.shape)

    return {
        "mesh ray cast (bvh_intersect)": lambda: render_view(cam, lshape),
        "mirror trace (polygon_hits)": lambda: render_snapshot(rig, sphere).color,
        "hull depth (hull_depth)": lambda: hull_depth(hull, cam),
        "splat forward (rasterize_forward)": lambda: render(cloud, cam).color,
        "splat backward (rasterize_backward)": lambda: render_backward(cloud, cam, out, dc, dd),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--resolution", type=int, default=64)
    args = ap.parse_args(argv)
    print(f"{'kernel':<38}{'python s':>10}{'compiled s':>12}{'speedup':>9}  agree")
    for name, fn in cases(args.resolution).items():
        with kernels.use_backend("python"):
            tp, rp = best_of(fn, args.repeat)
        with kernels.use_backend("compiled"):
            tc, rc = best_of(fn, args.repeat)
        agree = np.allclose(_flat(rp), _flat(rc), rtol=1e-9, atol=1e-9)
        print(f"{name:<38}{tp:>10.4f}{tc:>12.4f}{tp / tc:>8.1f}x  {agree}")


if __name__ == "__main__":
    main()
