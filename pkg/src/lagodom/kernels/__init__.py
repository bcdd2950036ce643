"""Hot-kernel backend selection.

The accelerated numba implementations are used by default. Setting the
environment variable LAGODOM_NUMBA to 0/false/off before import selects the
pure-numpy fallback instead; the fallback is also chosen automatically when
numba cannot be imported. Both backends share signatures and semantics, and
``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import logging
import os

_log = logging.getLogger(__name__)

_FLAG = os.environ.get("LAGODOM_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "off", "no")

if _WANT_NUMBA:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - depends on environment
        from . import numpy_backend as _impl

        BACKEND = "numpy"
        _log.warning("numba unavailable, falling back to numpy kernels")
else:
    from . import numpy_backend as _impl

    BACKEND = "numpy"


def get_backend(name: str):
    """Return a kernel backend module by name ('numba' or 'numpy')."""
    if name == "numba":
        from . import numba_backend

        return numba_backend
    if name == "numpy":
        from . import numpy_backend

        return numpy_backend
    raise ValueError(f"unknown kernel backend: {name!r}")


curvature = _impl.curvature
select_features = _impl.select_features
plane_normals = _impl.plane_normals
match_system = _impl.match_system
match_cost = _impl.match_cost
raycast = _impl.raycast

__all__ = [
    "BACKEND",
    "get_backend",
    "curvature",
    "select_features",
    "plane_normals",
    "match_system",
    "match_cost",
    "raycast",
]
