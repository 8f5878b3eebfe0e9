"""Hot numeric kernels with numba and pure-numpy implementations.

See :mod:`roomsim.kernels.backend` for how the active path is chosen.
"""

from .backend import (
    BACKEND,
    HAVE_NUMBA,
    USE_NUMBA,
    backend_info,
    backend_name,
    set_threads,
)

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "USE_NUMBA",
    "backend_info",
    "backend_name",
    "set_threads",
]
