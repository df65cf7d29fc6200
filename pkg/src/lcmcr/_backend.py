"""Kernel backend selection.

The compiled extension is optional; when it is missing the pure NumPy
kernels are used and every result is identical up to float rounding.
Set LCMCR_BACKEND=pure|compiled|auto before import, or call set_backend
at runtime.  "compiled" errors out if the extension is not built, "auto"
prefers it silently.
"""

from __future__ import annotations

import os
import warnings

from . import _kernels_py as _pure

try:
    from . import _kernels_cy as _compiled
except ImportError:
    _compiled = None


def _resolve(name: str):
    if name == "pure":
        return _pure
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError(
                "LCMCR_BACKEND=compiled but the extension is not built; "
                "reinstall the package or use the pure backend"
            )
        return _compiled
    if name == "auto":
        return _compiled if _compiled is not None else _pure
    raise ValueError(f"unknown backend {name!r}, expected pure, compiled, or auto")


_env = os.environ.get("LCMCR_BACKEND", "auto")
try:
    _active = _resolve(_env)
except (ValueError, RuntimeError) as exc:
    warnings.warn(f"{exc}; falling back to auto", RuntimeWarning)
    _active = _resolve("auto")


def active():
    return _active


def set_backend(name: str) -> None:
    global _active
    _active = _resolve(name)


def backend_name() -> str:
    return "compiled" if _active is _compiled and _compiled is not None else "pure"


def has_compiled() -> bool:
    return _compiled is not None
