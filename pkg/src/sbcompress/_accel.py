"""Backend switch for the hot kernels.

``SBCOMPRESS_BACKEND=numpy`` routes every kernel through its vectorised
numpy implementation; the default is ``numba``.  The variable is read once,
at import time.  Both implementations are always importable so tests and
benchmarks can call them side by side.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

BACKEND = os.environ.get("SBCOMPRESS_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"SBCOMPRESS_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")
if numba is None:
    BACKEND = "numpy"

HAVE_NUMBA = numba is not None
USE_NUMBA = BACKEND == "numba"


def njit(func):
    if numba is None:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def pick(jit_impl, numpy_impl):
    return jit_impl if USE_NUMBA else numpy_impl
