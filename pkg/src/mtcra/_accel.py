"""Backend selection for the compiled kernels.

Set ``MTCRA_DISABLE_NUMBA=1`` to force the pure-numpy code path. The flag is
read once, at import time.
"""

import os

_FLAG = os.environ.get("MTCRA_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    Always compiles when numba exists so both paths can be tested in one
    process; the env flag only picks which path the public names bind to.
    """
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)


def backend():
    return "numba" if USE_NUMBA else "numpy"
