"""Numba acceleration switch.

Hot sampling kernels ship in two implementations: a numba ``@njit`` version
and a pure-numpy fallback that performs the arithmetic in the same order
(so both produce bit-identical float32 results). Selection happens once at
import via the ``ECHOWORLD_NUMBA`` environment variable: set it to ``0``,
``false`` or ``off`` to force the numpy path. The numpy path is also used
automatically when numba is not importable.
"""

from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_ENV_VAR = "ECHOWORLD_NUMBA"
_FALSey = {"0", "false", "off", "no"}


def numba_enabled() -> bool:
    """True when jitted kernels should be used."""
    if numba is None:
        return False
    return os.environ.get(_ENV_VAR, "1").strip().lower() not in _FALSey


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)
