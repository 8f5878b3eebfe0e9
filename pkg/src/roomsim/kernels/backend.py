"""Kernel backend selection.

Hot numeric kernels (image-source accumulation, ray bounce loops, FDTD
stepping) ship in two versions: a numba ``@njit`` build of the scalar loop
code and a vectorized pure-numpy implementation.  The active backend is
chosen once at import time from the ``ROOMSIM_BACKEND`` environment
variable:

    auto   -- numba when importable, numpy otherwise (default)
    numba  -- require numba, raise if it cannot be imported
    numpy  -- force the pure-numpy path

Both paths use the same counter-based per-ray RNG, so results agree to
floating-point accumulation order.  Within one backend, results are
bit-reproducible for a fixed seed regardless of thread count.
"""

from __future__ import annotations

import os

_ENV_VAR = "ROOMSIM_BACKEND"

try:
    import numba

    HAVE_NUMBA = True
    _NUMBA_VERSION = numba.__version__
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False
    _NUMBA_VERSION = None


def _resolve_backend() -> str:
    requested = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{_ENV_VAR} must be one of 'auto', 'numba', 'numpy', got {requested!r}"
        )
    if requested == "numba" and not HAVE_NUMBA:
        raise ImportError(f"{_ENV_VAR}=numba but numba is not importable")
    if requested == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    return requested


BACKEND = _resolve_backend()
USE_NUMBA = BACKEND == "numba"


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return BACKEND


def backend_info() -> dict:
    """Diagnostic summary of backend availability and selection."""
    return {
        "backend": BACKEND,
        "numba_available": HAVE_NUMBA,
        "numba_version": _NUMBA_VERSION,
        "env": os.environ.get(_ENV_VAR, ""),
    }


if HAVE_NUMBA:
    import functools

    # cache=True amortizes compilation across processes; no fastmath so
    # the compiled loops match the plain-python arithmetic bit for bit.
    jit = functools.partial(numba.njit, cache=True)
    jit_parallel = functools.partial(numba.njit, cache=True, parallel=True)
    prange = numba.prange

    def set_threads(n: int) -> None:
        # numba rejects counts above its launch-time pool size, so clamp;
        # results are thread-count independent either way.
        limit = numba.config.NUMBA_NUM_THREADS
        numba.set_num_threads(min(max(1, n), limit))

else:  # pragma: no cover - exercised only without numba

    def jit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

    jit_parallel = jit
    prange = range

    def set_threads(n: int) -> None:
        pass
