"""Kernel backend selection.

The compiled Cython extension is preferred when importable; otherwise the
numpy fallback is used. Set VOXTRACK_BACKEND=python or =compiled to force a
choice (forcing `compiled` without the extension built is a configuration
error). Both backends are deterministic and bit-identical; only speed and
the effect of the worker count differ.
"""

import os

from . import _kernels_py
from .errors import ConfigurationError

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_FORCED = os.environ.get("VOXTRACK_BACKEND", "").strip().lower()


def available_backends() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def get_backend(name: str | None = None):
    """Resolve a backend module by name (None = default selection)."""
    name = name or _FORCED or ("compiled" if _compiled is not None else "python")
    if name == "compiled":
        if _compiled is None:
            raise ConfigurationError(
                "compiled kernels requested but the extension is not built "
                "(pip install -e . --no-build-isolation)")
        return _compiled
    if name == "python":
        return _kernels_py
    raise ConfigurationError(f"unknown backend {name!r}")


def backend_name() -> str:
    return "compiled" if (get_backend() is _compiled) else "python"


def carve_occupancy(pix, cam_depth, thresholds, offsets, out, workers):
    get_backend().carve_occupancy(pix, cam_depth, thresholds, offsets, out, workers)
