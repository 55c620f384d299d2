"""Select the compiled kernel core when importable, else the numpy fallback.

Set ``BAYESQP_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from bayesqp import _pycore

core = _pycore
BACKEND = "python"

if os.environ.get("BAYESQP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from bayesqp import _ccore
    except ImportError:  # extension not built
        pass
    else:
        core = _ccore
        BACKEND = "cython"

SOBOL_BITS = _pycore.SOBOL_BITS

__all__ = ["core", "BACKEND", "SOBOL_BITS"]
