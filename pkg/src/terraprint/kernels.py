"""Backend selection for the simulation kernels.

The compiled extension is used when it was built; otherwise the pure-Python
twin is imported. Set ``TERRAPRINT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from terraprint import _kernels_py

if os.environ.get("TERRAPRINT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from terraprint import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

terrain_eval = _impl.terrain_eval
terrain_height = _impl.terrain_height
contact_plane = _impl.contact_plane
advance = _impl.advance

STATE_LEN = _kernels_py.STATE_LEN
PARAMS_LEN = _kernels_py.PARAMS_LEN
OUT_LEN = _kernels_py.OUT_LEN

__all__ = [
    "BACKEND",
    "terrain_eval",
    "terrain_height",
    "contact_plane",
    "advance",
    "STATE_LEN",
    "PARAMS_LEN",
    "OUT_LEN",
]
