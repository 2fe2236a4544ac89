"""Kernel backend selection.

The compiled extension is used when it imports; set ``PESCOV_PURE_PYTHON=1``
to force the NumPy fallback.
"""

import os

from . import _logistic_py

if os.environ.get("PESCOV_PURE_PYTHON", "") not in ("", "0"):
    kernels = _logistic_py
    NAME = "python"
else:
    try:
        from . import _logistic as kernels
        NAME = "cython"
    except ImportError:  # extension not built
        kernels = _logistic_py
        NAME = "python"

python_kernels = _logistic_py
