"""Hot loops with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports; set ``AVSTACK_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active one.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("AVSTACK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if _active is compiled_backend else "python"

bin_height_grid = _active.bin_height_grid
virtual_scan_keep = _active.virtual_scan_keep
raycast = _active.raycast
uct_plan = _active.uct_plan
SplitMix64 = python_backend.SplitMix64

__all__ = [
    "BACKEND",
    "SplitMix64",
    "bin_height_grid",
    "compiled_backend",
    "python_backend",
    "raycast",
    "uct_plan",
    "virtual_scan_keep",
]
