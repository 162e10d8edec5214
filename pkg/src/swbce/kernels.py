"""Selects the matching kernel implementation at import time.

The compiled extension is preferred.  Setting ``SWBCE_PURE_PYTHON=1`` in the
environment, or a missing build, selects the pure-Python twin.  Both return
identical results; ``BACKEND`` names the active one.
"""

import os

from . import _matching_py

if os.environ.get("SWBCE_PURE_PYTHON") == "1":
    _impl = _matching_py
else:
    try:
        from . import _matching as _impl
    except ImportError:
        _impl = _matching_py

BACKEND = "python" if _impl is _matching_py else "cython"

hopcroft_karp = _impl.hopcroft_karp
greedy_match = _impl.greedy_match
