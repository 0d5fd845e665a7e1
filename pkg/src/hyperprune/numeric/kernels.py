"""Selects the compiled conv kernels when available, else the numpy fallback.

Set ``HYPERPRUNE_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_c = None

if os.environ.get("HYPERPRUNE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _c  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _c = None


def im2col(xp, k, stride, out_h, out_w):
    if _c is not None and xp.dtype in (np.float64, np.float32):
        return _c.im2col(np.ascontiguousarray(xp), k, stride, out_h, out_w)
    return _pykernels.im2col(xp, k, stride, out_h, out_w)


def col2im(cols, channels, k, stride, out_h, out_w, hp, wp):
    if _c is not None and cols.dtype in (np.float64, np.float32):
        return _c.col2im(np.ascontiguousarray(cols), channels, k, stride, out_h, out_w, hp, wp)
    return _pykernels.col2im(cols, channels, k, stride, out_h, out_w, hp, wp)
