"""Hot kernels with a compiled backend and a pure-Python fallback.

The Cython extension is used when it was built; set ``AUTORIG_PURE_PYTHON=1``
to force the fallback. Both backends produce bit-identical results.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    if os.environ.get("AUTORIG_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"


def backends():
    """Available backend modules keyed by name (the fallback is always present)."""
    out = {"python": _fallback}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


voxel_dijkstra = _impl.voxel_dijkstra
segments_visible = _impl.segments_visible
triangle_voxelize = _impl.triangle_voxelize
farthest_point_sample = _impl.farthest_point_sample

__all__ = [
    "BACKEND",
    "backends",
    "voxel_dijkstra",
    "segments_visible",
    "triangle_voxelize",
    "farthest_point_sample",
]
