"""Backend selection for the per-step kernel.

The compiled extension is used when importable; ``STOPGO_PURE_PYTHON=1`` forces the numpy path.
"""

import os

from . import _pykernel

if os.environ.get("STOPGO_PURE_PYTHON", "") not in ("", "0"):
    advance = _pykernel.advance
    BACKEND = "python"
else:
    try:
        from . import _ckernel
    except ImportError:  # extension not built
        advance = _pykernel.advance
        BACKEND = "python"
    else:
        advance = _ckernel.advance
        BACKEND = "cython"

__all__ = ["advance", "BACKEND"]
