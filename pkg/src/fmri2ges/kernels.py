"""Backend selection for the hot kernels.

The compiled ``_native`` extension is used when it imports; otherwise (or
with ``FMRI2GES_PURE_PYTHON=1``) the numpy implementations are used.
"""
import os

from . import _native_py

BACKEND = "python"
if os.environ.get("FMRI2GES_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _native as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _native_py
else:
    _impl = _native_py

lanczos_resample = _impl.lanczos_resample

__all__ = ["BACKEND", "lanczos_resample"]
