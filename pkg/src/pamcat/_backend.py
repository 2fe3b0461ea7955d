"""Select the compiled kernels when available, the pure-Python ones otherwise.

Set ``PAMCAT_BACKEND=python`` to force the fallback.
"""
import os

from . import _fallback

if os.environ.get("PAMCAT_BACKEND", "").strip().lower() == "python":
    kernels = _fallback
else:
    try:
        from . import _core as kernels
    except ImportError:  # extension not built
        kernels = _fallback

BACKEND = kernels.BACKEND
