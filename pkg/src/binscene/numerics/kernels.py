"""Selects the im2col/col2im implementation at import time.

The compiled extension is used when it was built; set ``BINSCENE_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _im2col_py

BACKEND = "python"
im2col = _im2col_py.im2col
col2im = _im2col_py.col2im

if os.environ.get("BINSCENE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        im2col = _kernels.im2col
        col2im = _kernels.col2im
