"""Kernel backend selection.

The compiled extension is used when importable; ``SEMIMATCH_PURE_PYTHON=1``
forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("SEMIMATCH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"


def get_kernels(name: str | None = None):
    """Return the kernel module for ``name`` ("cython" or "python"), default active."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels as compiled

        return compiled
    raise ValueError(f"unknown backend {name!r}")
