"""Backend selection for the hot kernels.

The compiled extension is used when it imports; ``CATOPTRA_BACKEND=python``
forces the numpy fallback.
"""

from __future__ import annotations

import os
import sys
from contextlib import contextmanager

from . import _kernels_py

_NAMES = ("bvh_intersect", "polygon_hits", "hull_depth", "rasterize_forward",
          "rasterize_backward")

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("CATOPTRA_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

bvh_intersect = _impl.bvh_intersect
polygon_hits = _impl.polygon_hits
hull_depth = _impl.hull_depth
rasterize_forward = _impl.rasterize_forward
rasterize_backward = _impl.rasterize_backward
triangles_brute = _kernels_py.triangles_brute


def backend_module(name: str):
    """The kernel module for ``"python"`` or ``"compiled"`` (for tests and benchmarks)."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")


@contextmanager
def use_backend(name: str):
    """Temporarily route every kernel call through the named backend."""
    mod = sys.modules[__name__]
    impl = backend_module(name)
    saved = {n: getattr(mod, n) for n in _NAMES}
    saved_backend = mod.BACKEND
    try:
        for n in _NAMES:
            setattr(mod, n, getattr(impl, n))
        mod.BACKEND = name
        yield impl
    finally:
        for n, f in saved.items():
            setattr(mod, n, f)
        mod.BACKEND = saved_backend
