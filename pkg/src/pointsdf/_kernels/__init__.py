"""Kernel backend selection.

The compiled extension (`_native`, built from Cython) is preferred; the
numpy backend is a drop-in fallback so the package works from a pure-Python
install.  Set POINTSDF_FORCE_FALLBACK=1 to ignore the extension (used by the
cross-checking tests and the benchmark).
"""

from __future__ import annotations

import os

from pointsdf._kernels import _backend_numpy

_FORCE_FALLBACK = os.environ.get("POINTSDF_FORCE_FALLBACK", "") == "1"

try:
    if _FORCE_FALLBACK:
        raise ImportError("fallback forced")
    from pointsdf._kernels import _native as _impl

    HAVE_NATIVE = True
except ImportError:
    _impl = _backend_numpy
    HAVE_NATIVE = False

BACKEND = _impl.NAME

voxel_query = _impl.voxel_query
winding_number = _impl.winding_number
mesh_distance = _impl.mesh_distance
ray_mesh = _impl.ray_mesh


def get_backend(name: str):
    """Explicit backend lookup for benchmarks and equivalence tests."""
    if name == "numpy":
        return _backend_numpy
    if name == "native":
        if not HAVE_NATIVE and not _FORCE_FALLBACK:
            raise ImportError("native kernels not built")
        from pointsdf._kernels import _native

        return _native
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        from pointsdf._kernels import _native  # noqa: F401

        names.append("native")
    except ImportError:
        pass
    return names
