"""Counter-based RNG for Monte-Carlo ray tracing.

Every random draw is a pure function of (per-ray stream id, draw slot):
``unit(stream, k)`` returns the k-th splitmix64 output of the stream as a
float in [0, 1).  The stream id of ray ``i`` is ``seed XOR i``.  Because
draws are position-addressed rather than stateful, the scalar bounce loop
(numba) and the vectorized wavefront tracer (numpy) consume identical
random sequences, and results do not depend on scheduling or thread count.

All arithmetic is uint64 with wraparound.  Scalar helpers are meant to run
inside compiled numba kernels only; the ``*_vec`` variants operate on
uint64 arrays where numpy wraps silently.
"""

from __future__ import annotations

import numpy as np

from .backend import jit

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_ONE = np.uint64(1)
_R30 = np.uint64(30)
_R27 = np.uint64(27)
_R31 = np.uint64(31)
_R11 = np.uint64(11)
_INV53 = float(2.0**-53)


def make_stream(seed: int, ray_index: int) -> np.uint64:
    """Stream id for one ray: seed XOR ray index (uint64)."""
    return np.uint64(np.uint64(seed) ^ np.uint64(ray_index))


def make_streams_vec(seed: int, ray_indices: np.ndarray) -> np.ndarray:
    """Vector of stream ids for an array of ray indices."""
    return np.uint64(seed) ^ ray_indices.astype(np.uint64)


@jit
def unit(stream: np.uint64, k: np.uint64) -> float:
    """k-th uniform draw in [0, 1) of the given stream (scalar, njit)."""
    z = stream + (k + _ONE) * _GAMMA
    z = (z ^ (z >> _R30)) * _M1
    z = (z ^ (z >> _R27)) * _M2
    z = z ^ (z >> _R31)
    return np.float64(z >> _R11) * _INV53


def unit_vec(streams: np.ndarray, k) -> np.ndarray:
    """Vectorized ``unit``: k may be a scalar slot or an array of slots."""
    if np.ndim(k) == 0:
        # python-int arithmetic then mask: numpy warns on scalar uint64
        # wraparound even though wraparound is the intended semantics
        off = np.uint64(((int(k) + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF)
    else:
        off = (np.asarray(k, dtype=np.uint64) + _ONE) * _GAMMA
    z = streams + off
    z = (z ^ (z >> _R30)) * _M1
    z = (z ^ (z >> _R27)) * _M2
    z = z ^ (z >> _R31)
    return (z >> _R11).astype(np.float64) * _INV53
