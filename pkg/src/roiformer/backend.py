"""Kernel backend selection.

Hot inner loops (1-D convolution forward/backward) come in two flavours: a
numba ``@njit`` version and a pure-numpy vectorized version.  The numba path
is the default when numba imports cleanly; setting the environment variable
``ROIFORMER_NO_NUMBA=1`` forces the numpy path.  Both paths are exercised by
the test suite and compared by ``benchmarks/bench_kernels.py``.
"""

import os

_FLAG = os.environ.get("ROIFORMER_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - depends on environment
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and not NUMBA_DISABLED


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
