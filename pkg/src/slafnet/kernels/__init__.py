"""Hot kernels: compiled extension when available, numpy otherwise.

Set ``SLAFNET_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

BACKEND = "python"

if os.environ.get("SLAFNET_PURE_PYTHON") != "1":
    try:
        from ._ckernels import cd_sweep, combine_packed, mul_packed  # noqa: F401
    except ImportError:
        pass
    else:
        BACKEND = "compiled"

if BACKEND == "python":
    from ._fallback import cd_sweep, combine_packed, mul_packed  # noqa: F401

from . import _fallback as fallback  # noqa: E402,F401

__all__ = ["BACKEND", "cd_sweep", "combine_packed", "mul_packed", "fallback"]
