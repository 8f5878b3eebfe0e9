"""Impulse-train accumulation for the image source engine.

Each image contributes either a single rounded-sample impulse or an
81-tap Hann-windowed sinc centered on its fractional delay, scaled by
its per-band amplitude.  Two implementations: a scalar loop (numba) and
a chunked bincount path (numpy).  Both add contributions in (image,
tap) order per output sample, so they are bit-identical.
"""

from __future__ import annotations

import math

import numpy as np

from . import backend
from .backend import jit

SINC_HALF_WIDTH = 40  # taps span [-40, +40] around the delay: 81 total
_WINDOW_PERIOD = 2 * SINC_HALF_WIDTH + 1


def _accumulate_loop(delays, amps, out, fractional):
    """Scalar reference loop; compiled by numba for the fast path."""
    n_images = delays.shape[0]
    n_bands = amps.shape[1]
    n_out = out.shape[1]
    for i in range(n_images):
        d = delays[i]
        if fractional:
            n0 = int(math.ceil(d - SINC_HALF_WIDTH))
            if n0 < 0:
                n0 = 0
            n1 = int(math.floor(d + SINC_HALF_WIDTH))
            if n1 > n_out - 1:
                n1 = n_out - 1
            for n in range(n0, n1 + 1):
                t = n - d
                w = 0.5 * (1.0 + math.cos(2.0 * math.pi * t / _WINDOW_PERIOD))
                if t > 1e-12 or t < -1e-12:
                    v = w * math.sin(math.pi * t) / (math.pi * t)
                else:
                    v = w
                for b in range(n_bands):
                    out[b, n] += amps[i, b] * v
        else:
            n = int(math.floor(d + 0.5))
            if 0 <= n < n_out:
                for b in range(n_bands):
                    out[b, n] += amps[i, b]
    return out


_accumulate_numba = jit(_accumulate_loop)


def _accumulate_numpy(delays, amps, out, fractional, chunk=65536):
    n_out = out.shape[1]
    n_bands = amps.shape[1]
    if not fractional:
        n = np.floor(delays + 0.5).astype(np.int64)
        valid = (n >= 0) & (n < n_out)
        for b in range(n_bands):
            out[b] += np.bincount(
                n[valid], weights=amps[valid, b], minlength=n_out
            )
        return out

    k = np.arange(2 * SINC_HALF_WIDTH + 1)
    for start in range(0, len(delays), chunk):
        d = delays[start : start + chunk]
        a = amps[start : start + chunk]
        n0 = np.ceil(d - SINC_HALF_WIDTH).astype(np.int64)
        idx = n0[:, None] + k[None, :]
        t = idx - d[:, None]
        w = 0.5 * (1.0 + np.cos(2.0 * np.pi * t / _WINDOW_PERIOD))
        v = w * np.sinc(t)
        valid = (np.abs(t) <= SINC_HALF_WIDTH) & (idx >= 0) & (idx < n_out)
        flat_idx = idx[valid]
        flat_v = v[valid]
        row = np.broadcast_to(
            np.arange(len(d))[:, None], idx.shape
        )[valid]
        for b in range(n_bands):
            out[b] += np.bincount(
                flat_idx, weights=a[row, b] * flat_v, minlength=n_out
            )
    return out


def accumulate_impulses(
    delays: np.ndarray,
    amps: np.ndarray,
    n_out: int,
    fractional: bool,
) -> np.ndarray:
    """Accumulate per-band impulse trains: returns [n_bands, n_out].

    delays: fractional sample positions, shape [n_images].
    amps: per-band amplitudes, shape [n_images, n_bands].
    """
    delays = np.ascontiguousarray(delays, dtype=np.float64)
    amps = np.ascontiguousarray(amps, dtype=np.float64)
    if delays.ndim != 1 or amps.ndim != 2 or amps.shape[0] != len(delays):
        raise ValueError("delays [n] and amps [n, bands] required")
    out = np.zeros((amps.shape[1], n_out), dtype=np.float64)
    if len(delays) == 0:
        return out
    if backend.USE_NUMBA:
        return _accumulate_numba(delays, amps, out, fractional)
    return _accumulate_numpy(delays, amps, out, fractional)
