"""Kernel backend selection.

The arithmetic kernels exist in two lanes: a compiled Cython core
(``dcbd._kernels._core``) and a NumPy fallback (``python_backend``). The
compiled lane is preferred when importable; ``DCBD_KERNELS=python`` or
``DCBD_KERNELS=compiled`` forces a lane (the latter raises if the extension
is missing). Both lanes implement identical semantics; results may differ by
float rounding in reductions, never in shape or policy.
"""

from __future__ import annotations

import importlib
import os

from . import python_backend as _py

_FORCE = os.environ.get("DCBD_KERNELS", "").strip().lower()

_ACTIVE = "python"
_core = None
if _FORCE != "python":
    try:
        _core = importlib.import_module("dcbd._kernels._core")
        _ACTIVE = "compiled"
    except ImportError:
        if _FORCE == "compiled":
            raise ImportError(
                "DCBD_KERNELS=compiled but the dcbd._kernels._core extension "
                "is not built; reinstall with Cython available"
            )

_NAMES = [n for n in dir(_py) if not n.startswith("_")]
for _n in _NAMES:
    if _core is not None and hasattr(_core, _n):
        globals()[_n] = getattr(_core, _n)
    else:
        globals()[_n] = getattr(_py, _n)


def backend() -> str:
    """Name of the active lane: 'compiled' or 'python'."""
    return _ACTIVE


def numpy_lane():
    """The NumPy fallback module (always available, used for parity tests)."""
    return _py
