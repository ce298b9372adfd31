"""Backend selection for the hot coordinate-sweep kernel.

Imports the compiled Cython kernel when present, otherwise falls back to
the pure-Python twin.  Set ESTEQ_PURE_PYTHON=1 to force the fallback.
"""

import os

if os.environ.get("ESTEQ_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels_cy as _impl

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"

penalized_sweeps = _impl.penalized_sweeps


def backend():
    """Name of the active kernel backend ('cython' or 'python')."""
    return BACKEND
