"""Objective evaluation metrics and external-score ingestion.

Implemented here: SI-SDR (scale-invariant signal-to-distortion ratio),
ESTOI (extended short-time objective intelligibility) and absolute
source-distance error.  PESQ is not computed (ITU-T P.862 is a licensed
standard); externally computed scores are ingested from CSV instead and
validated against the documented value ranges, so reports stay complete
when users bring their own PESQ tooling.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .dsp import AudioBuffer, resample
from .errors import DegenerateDataError
from .manifest import DatasetManifest
from .results import EvalResult

METRIC_NAMES = ("pesq", "estoi", "si_sdr", "dist_err")

# value ranges enforced on finite metric values; si_sdr is unbounded
_RANGES = {
    "pesq": (1.0, 5.0),
    "estoi": (-1.0, 1.0),
    "dist_err": (0.0, math.inf),
}

# residual energies this far (in relative terms) below the target energy
# are below float64 resolution of the projection algebra and count as an
# exactly-zero residual (the perfect-reconstruction sentinel)
_ZERO_RESIDUAL_REL = 1e-20


@dataclass(frozen=True)
class MetricValue:
    """One scored metric: name, value and finite/+infinity sentinel."""

    name: str
    value: float
    sentinel: str = "finite"

    def __post_init__(self):
        if self.name not in METRIC_NAMES:
            raise ValueError(f"unknown metric {self.name!r}")
        if self.sentinel not in ("finite", "plus_infinity"):
            raise ValueError(f"bad sentinel {self.sentinel!r}")
        object.__setattr__(self, "value", float(self.value))
        if self.sentinel == "plus_infinity":
            if self.value != math.inf:
                raise ValueError("plus_infinity sentinel requires value inf")
            return
        if not math.isfinite(self.value):
            raise ValueError(f"finite {self.name} got value {self.value}")
        if self.name in _RANGES:
            lo, hi = _RANGES[self.name]
            if not lo <= self.value <= hi:
                raise ValueError(
                    f"{self.name} value {self.value} outside [{lo}, {hi}]"
                )

    @classmethod
    def infinite(cls, name: str) -> "MetricValue":
        return cls(name=name, value=math.inf, sentinel="plus_infinity")


def _samples(x) -> np.ndarray:
    if isinstance(x, AudioBuffer):
        return x.samples
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("expected mono audio (1-D samples)")
    return arr


def si_sdr(estimate, reference) -> MetricValue:
    """Scale-invariant signal-to-distortion ratio in dB.

    Both signals are mean-removed; the reference is scaled by the
    projection coefficient alpha = <est, ref> / <ref, ref> and the score
    is 10 log10(||alpha ref||^2 / ||alpha ref - est||^2).  A residual of
    exactly zero (estimate is a scaled reference) returns the
    plus-infinity sentinel instead of a made-up finite cap.
    """
    est = _samples(estimate)
    ref = _samples(reference)
    if isinstance(estimate, AudioBuffer) and isinstance(reference, AudioBuffer):
        if estimate.sample_rate != reference.sample_rate:
            raise ValueError("sample rates differ")
    if len(est) != len(ref):
        raise ValueError(
            f"length mismatch: estimate {len(est)} vs reference {len(ref)}"
        )
    if len(ref) == 0:
        raise ValueError("empty signals")
    if not np.any(ref):
        raise DegenerateDataError("si_sdr reference is all zero")

    est = est - est.mean()
    ref = ref - ref.mean()
    ss = float(ref @ ref)
    if ss == 0.0:
        raise DegenerateDataError("reference has no energy after mean removal")
    alpha = float(est @ ref) / ss
    target = alpha * ref
    target_e = float(target @ target)
    residual = target - est
    residual_e = float(residual @ residual)
    if target_e == 0.0:
        # estimate orthogonal to reference: the ratio is 0/||est||^2 and
        # the dB value is unbounded below; refuse rather than emit -inf
        raise DegenerateDataError("estimate carries no reference component")
    if residual_e <= target_e * _ZERO_RESIDUAL_REL:
        return MetricValue.infinite("si_sdr")
    return MetricValue(
        name="si_sdr", value=10.0 * math.log10(target_e / residual_e)
    )


# --------------------------------------------------------------------------
# ESTOI

ESTOI_RATE = 10000
_FRAME = 256
_HOP = 128
_N_BANDS = 15
_LOWEST_CF_HZ = 150.0
_SEGMENT_FRAMES = 30
_VAD_RANGE_DB = 40.0


def _third_octave_weights() -> np.ndarray:
    """Boolean bin-selection matrix [15 bands, 129 rfft bins] at 10 kHz."""
    freqs = np.fft.rfftfreq(_FRAME, d=1.0 / ESTOI_RATE)
    centers = _LOWEST_CF_HZ * 2.0 ** (np.arange(_N_BANDS) / 3.0)
    lo = centers * 2.0 ** (-1.0 / 6.0)
    hi = centers * 2.0 ** (1.0 / 6.0)
    return (freqs[None, :] >= lo[:, None]) & (freqs[None, :] < hi[:, None])


_BAND_MASK = _third_octave_weights()


def _frame_matrix(x: np.ndarray) -> np.ndarray:
    """Complete Hann-windowed frames [n_frames, frame]; no tail padding."""
    n_frames = 1 + (len(x) - _FRAME) // _HOP
    idx = np.arange(_FRAME)[None, :] + _HOP * np.arange(n_frames)[:, None]
    w = np.hanning(_FRAME)
    return x[idx] * w[None, :]


def _band_envelopes(frames: np.ndarray) -> np.ndarray:
    """One-third-octave magnitude envelopes [bands, frames]."""
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    return np.sqrt(spec @ _BAND_MASK.T).T


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    m = m - m.mean(axis=1, keepdims=True)
    return m / np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-20)


def _normalize_cols(m: np.ndarray) -> np.ndarray:
    m = m - m.mean(axis=0, keepdims=True)
    return m / np.maximum(np.linalg.norm(m, axis=0, keepdims=True), 1e-20)


def estoi(clean: AudioBuffer, processed: AudioBuffer) -> MetricValue:
    """Extended short-time objective intelligibility.

    Both signals are resampled to 10 kHz and framed (256-sample rFFT,
    50% hop, Hann).  Frames whose clean energy sits more than 40 dB
    below the loudest clean frame are dropped from both signals.  Band
    magnitudes over 15 one-third-octave bands from 150 Hz form the
    band-time matrix; over every contiguous 30-frame segment the rows
    and then the columns are mean/variance normalized and the mean
    clean/processed column correlation is taken.  The segment average,
    clipped to [-1, 1], is the score.
    """
    if not isinstance(clean, AudioBuffer) or not isinstance(
        processed, AudioBuffer
    ):
        raise ValueError("estoi expects AudioBuffer inputs")
    if clean.sample_rate != processed.sample_rate:
        raise ValueError("sample rates differ")
    if len(clean.samples) != len(processed.samples):
        raise ValueError("length mismatch")
    if not np.any(clean.samples):
        raise DegenerateDataError("clean signal is silent")

    x = clean.samples
    y = processed.samples
    if clean.sample_rate != ESTOI_RATE:
        x = resample(x, clean.sample_rate, ESTOI_RATE)
        y = resample(y, processed.sample_rate, ESTOI_RATE)
    if len(x) < _FRAME:
        raise DegenerateDataError("signal shorter than one analysis frame")

    xf = _frame_matrix(x)
    yf = _frame_matrix(y)
    energy = (xf**2).sum(axis=1)
    peak = energy.max()
    if peak <= 0.0:
        raise DegenerateDataError("clean signal is silent")
    keep = energy > peak * 10.0 ** (-_VAD_RANGE_DB / 10.0)
    xf, yf = xf[keep], yf[keep]
    if xf.shape[0] < _SEGMENT_FRAMES:
        raise DegenerateDataError(
            f"only {xf.shape[0]} active frames; need {_SEGMENT_FRAMES}"
        )

    xb = _band_envelopes(xf)
    yb = _band_envelopes(yf)
    n_frames = xb.shape[1]
    scores = []
    for m in range(_SEGMENT_FRAMES, n_frames + 1):
        xs = _normalize_cols(_normalize_rows(xb[:, m - _SEGMENT_FRAMES : m]))
        ys = _normalize_cols(_normalize_rows(yb[:, m - _SEGMENT_FRAMES : m]))
        scores.append(float((xs * ys).sum()) / _SEGMENT_FRAMES)
    value = float(np.clip(np.mean(scores), -1.0, 1.0))
    return MetricValue(name="estoi", value=value)


def distance_error(predicted_m: float, true_m: float) -> MetricValue:
    """Absolute error between predicted and true source distance."""
    if predicted_m < 0 or true_m < 0:
        raise ValueError("distances must be non-negative")
    return MetricValue(name="dist_err", value=abs(predicted_m - true_m))


# --------------------------------------------------------------------------
# External score ingestion

EXTERNAL_HEADER = (
    "engine",
    "room_id",
    "condition_id",
    "source_id",
    "receiver_id",
    "metric",
    "value",
)

# metric names accepted in external files; 'sde' rows carry predicted
# source distances in meters and are converted to dist_err rows
EXTERNAL_METRICS = ("pesq", "estoi", "si_sdr", "sde")


def ingest_external_scores(
    path,
    metric_name: str,
    manifest: DatasetManifest,
    algorithm: str = "external",
) -> list:
    """Read externally computed scores into validated EvalResult rows.

    The file must hold one metric named by ``metric_name``; every row's
    key must resolve against ``manifest``.  PESQ values are checked
    against [1, 5].  Distance predictions (metric ``sde``, meters) are
    converted to ``dist_err`` rows against the manifest true distance.
    """
    if metric_name not in EXTERNAL_METRICS:
        raise ValueError(
            f"metric_name must be one of {EXTERNAL_METRICS}, "
            f"got {metric_name!r}"
        )
    if not os.path.exists(path):
        raise FileNotFoundError(path)

    out = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != EXTERNAL_HEADER:
            raise ValueError(
                f"external score file must start with header "
                f"{','.join(EXTERNAL_HEADER)}"
            )
        for i, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(EXTERNAL_HEADER):
                raise ValueError(f"line {i}: expected 7 fields")
            engine, room, cond, src, rcv, metric, raw = rec
            if metric != metric_name:
                raise ValueError(
                    f"line {i}: metric {metric!r} does not match "
                    f"declared {metric_name!r}"
                )
            try:
                value = float(raw)
            except ValueError as exc:
                raise ValueError(f"line {i}: bad value {raw!r}") from exc
            key = (engine, room, cond, src, rcv)
            try:
                entry = manifest.by_key(key)
            except KeyError as exc:
                raise ValueError(f"line {i}: unknown key {key}") from exc

            if metric_name == "sde":
                if value < 0:
                    raise ValueError(
                        f"line {i}: negative distance prediction {value}"
                    )
                mv = distance_error(value, entry.true_distance)
            else:
                try:
                    if value == math.inf:
                        mv = MetricValue.infinite(metric_name)
                    else:
                        mv = MetricValue(name=metric_name, value=value)
                except ValueError as exc:
                    raise ValueError(f"line {i}: {exc}") from exc
            out.append(
                EvalResult(
                    engine=engine,
                    room_id=room,
                    condition_id=cond,
                    source_id=src,
                    receiver_id=rcv,
                    algorithm=algorithm,
                    metric=mv.name,
                    value=mv.value,
                )
            )
    return out
