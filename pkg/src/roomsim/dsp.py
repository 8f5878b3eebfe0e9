"""Shared signal-processing utilities.

All filters here are linear-phase FIRs applied with group-delay
compensation, so filtered signals stay time-aligned with their input.
The octave filterbank is amplitude-complementary by construction: the
band responses sum to exactly one on the design grid, which keeps
flat-gain paths (uniform band weights) impulse-exact after band shaping.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve, firwin, upfirdn

OCTAVE_CENTERS_HZ = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0)
N_BANDS = len(OCTAVE_CENTERS_HZ)

# fs must place Nyquist at or above the top band edge (4000 * sqrt(2)).
MIN_FILTERBANK_FS = 11314.0


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio: float64 samples at an integer sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=np.float64)
        )
        if self.samples.ndim != 1:
            raise ValueError("AudioBuffer is mono: samples must be 1-D")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def fft_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution of two 1-D signals (length n + m - 1)."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.ndim != 1 or h.ndim != 1:
        raise ValueError("fft_convolve expects 1-D inputs")
    if len(x) == 0 or len(h) == 0:
        raise ValueError("fft_convolve inputs must be non-empty")
    return fftconvolve(x, h, mode="full")


_LOWPASS_TAPS = 255
_KAISER_BETA_60DB = 5.65326  # 0.1102 * (60 - 8.7)


def lowpass(x: np.ndarray, fs: float, cutoff_hz: float) -> np.ndarray:
    """Kaiser-window FIR lowpass (255 taps, -60 dB stopband).

    Output has the same length as the input and is time-aligned: the
    filter's group delay of (taps - 1) / 2 samples is trimmed off.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("lowpass expects a 1-D signal")
    if not 0.0 < cutoff_hz < fs / 2.0:
        raise ValueError(
            f"cutoff must lie in (0, fs/2), got {cutoff_hz} at fs={fs}"
        )
    taps = firwin(
        _LOWPASS_TAPS, cutoff_hz, window=("kaiser", _KAISER_BETA_60DB), fs=fs
    )
    half = (_LOWPASS_TAPS - 1) // 2
    y = fftconvolve(x, taps, mode="full")
    return y[half : half + len(x)]


def _as_fraction(fs_in: float, fs_out: float) -> Fraction:
    if float(fs_in).is_integer() and float(fs_out).is_integer():
        return Fraction(int(fs_out), int(fs_in))
    return Fraction(fs_out / fs_in).limit_denominator(20000)


def resample(x: np.ndarray, fs_in: float, fs_out: float) -> np.ndarray:
    """Polyphase windowed-sinc resampling.

    The rate ratio is reduced to a fraction up/down; a Kaiser-window
    (beta = 14, roughly -135 dB images) sinc prototype anchored at the
    slower Nyquist drives a polyphase upfirdn pass.  Equal rates return
    an exact copy.  Output length is round(n * fs_out / fs_in).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("resample expects a 1-D signal")
    if fs_in <= 0 or fs_out <= 0:
        raise ValueError("sample rates must be positive")
    frac = _as_fraction(fs_in, fs_out)
    up, down = frac.numerator, frac.denominator
    if up == down:
        return x.copy()

    m = max(up, down)
    half = down * int(np.ceil(32 * m / down))  # group delay, multiple of down
    n = np.arange(-half, half + 1, dtype=np.float64)
    fc = 0.5 / m  # cycles per up-rate sample: slower-rate Nyquist
    h = 2.0 * fc * np.sinc(2.0 * fc * n) * np.kaiser(2 * half + 1, 14.0)
    h /= h.sum()

    v = upfirdn(h * up, x, up=up, down=down)
    skip = half // down
    n_out = int(round(len(x) * up / down))
    y = v[skip : skip + n_out]
    if len(y) < n_out:  # guard: degenerate short inputs
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    return y


# ---------------------------------------------------------------------------
# STFT / ISTFT


@dataclass(frozen=True)
class StftConfig:
    """Frame/hop/rate contract for analysis-synthesis processing."""

    frame: int = 512
    hop: int = 128
    sample_rate: int = 16000

    def __post_init__(self):
        if self.frame <= 0 or self.hop <= 0 or self.hop > self.frame:
            raise ValueError("need 0 < hop <= frame")
        if self.frame % self.hop != 0:
            raise ValueError("frame must be a multiple of hop for COLA")

    @property
    def n_bins(self) -> int:
        return self.frame // 2 + 1

    def window(self) -> np.ndarray:
        # periodic Hann: COLA-compliant at hop = frame / k for k >= 2
        n = np.arange(self.frame)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.frame)


def stft(x: np.ndarray, config: StftConfig = StftConfig()) -> np.ndarray:
    """Windowed rFFT frames: complex array [n_frames, n_bins]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("stft expects a 1-D signal")
    frame, hop = config.frame, config.hop
    if len(x) < frame:
        x = np.concatenate([x, np.zeros(frame - len(x))])
    n_frames = 1 + int(np.ceil((len(x) - frame) / hop))
    pad = (n_frames - 1) * hop + frame - len(x)
    if pad:
        x = np.concatenate([x, np.zeros(pad)])
    w = config.window()
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(x[idx] * w[None, :], axis=1)


def istft(
    z: np.ndarray, config: StftConfig = StftConfig(), length: int | None = None
) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`.

    Interior samples reconstruct to within ~1e-6; the first and last
    frame's worth of samples carry edge taper and are normalized by the
    accumulated window power.
    """
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[1] != config.n_bins:
        raise ValueError("istft expects [n_frames, n_bins] complex input")
    frame, hop = config.frame, config.hop
    w = config.window()
    n_frames = z.shape[0]
    total = (n_frames - 1) * hop + frame
    y = np.zeros(total)
    norm = np.zeros(total)
    frames = np.fft.irfft(z, n=frame, axis=1)
    for m in range(n_frames):
        start = m * hop
        y[start : start + frame] += frames[m] * w
        norm[start : start + frame] += w * w
    y = y / np.maximum(norm, 1e-12)
    if length is not None:
        if length > total:
            y = np.concatenate([y, np.zeros(length - total)])
        else:
            y = y[:length]
    return y


# ---------------------------------------------------------------------------
# Octave filterbank


@dataclass(frozen=True)
class OctaveFilterBank:
    """Six linear-phase octave band FIRs (125 Hz ... 4 kHz centers).

    Band magnitude weights crossfade with raised cosines on a log
    frequency axis and sum to exactly one at every design frequency, so
    the bank is amplitude-complementary: summing all band outputs
    reproduces the input (one delayed, compensated impulse).  The lowest
    band extends down to DC and the highest up to Nyquist.
    """

    sample_rate: float
    taps: tuple  # tuple of 1-D float64 arrays, equal odd length

    @property
    def centers(self) -> tuple:
        return OCTAVE_CENTERS_HZ

    @property
    def n_bands(self) -> int:
        return N_BANDS

    @property
    def group_delay(self) -> int:
        return (len(self.taps[0]) - 1) // 2

    def apply(self, x: np.ndarray, band: int) -> np.ndarray:
        """Filter x with one band; output time-aligned, same length."""
        x = np.asarray(x, dtype=np.float64)
        gd = self.group_delay
        y = fftconvolve(x, self.taps[band], mode="full")
        return y[gd : gd + len(x)]

    def apply_bank(self, x: np.ndarray) -> np.ndarray:
        """All bands at once: array [n_bands, len(x)]."""
        return np.stack([self.apply(x, b) for b in range(self.n_bands)])


def _crossfade_up(f: np.ndarray, edge_hz: float, half_width_oct: float):
    """Raised-cosine 0->1 ramp centered on edge_hz, in log2 frequency."""
    with np.errstate(divide="ignore"):
        x = np.log2(np.maximum(f, 1e-12) / edge_hz)
    t = np.clip((x + half_width_oct) / (2.0 * half_width_oct), 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * t)


def octave_filterbank(fs: float) -> OctaveFilterBank:
    """Design the six-band amplitude-complementary octave bank at fs."""
    if fs < MIN_FILTERBANK_FS:
        raise ValueError(
            f"fs must be >= {MIN_FILTERBANK_FS} Hz to cover the 4 kHz "
            f"octave (got {fs})"
        )
    n_taps = int(round(0.256 * fs))
    if n_taps % 2 == 0:
        n_taps += 1
    freqs = np.fft.rfftfreq(n_taps, d=1.0 / fs)
    half_width = 1.0 / 6.0  # octaves

    edges = [c * np.sqrt(2.0) for c in OCTAVE_CENTERS_HZ[:-1]]
    mags = []
    for b in range(N_BANDS):
        mag = np.ones_like(freqs)
        if b > 0:
            mag = mag * _crossfade_up(freqs, edges[b - 1], half_width)
        if b < N_BANDS - 1:
            mag = mag * (1.0 - _crossfade_up(freqs, edges[b], half_width))
        mags.append(mag)

    delay = (n_taps - 1) / 2.0
    phase = np.exp(-2j * np.pi * freqs * delay / fs)
    taps = tuple(
        np.fft.irfft(m * phase, n=n_taps).astype(np.float64) for m in mags
    )
    return OctaveFilterBank(sample_rate=float(fs), taps=taps)


# ---------------------------------------------------------------------------
# Reverberation time


def schroeder_decay_db(h: np.ndarray, power: bool = False) -> np.ndarray:
    """Backward-integrated energy decay curve, normalized to 0 dB at t=0.

    With power=True the input is taken as an instantaneous power series
    (e.g. echogram bins) instead of pressure samples.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or len(h) == 0:
        raise ValueError("need a non-empty 1-D impulse response")
    inst = h if power else h**2
    energy = np.cumsum(inst[::-1])[::-1]
    if energy[0] <= 0.0:
        raise ValueError("impulse response has no energy")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def fit_t60(
    h: np.ndarray,
    fs: float,
    fit_lo_db: float = -5.0,
    fit_hi_db: float = -35.0,
    power: bool = False,
) -> float:
    """T60 from a least-squares line on the Schroeder curve.

    The line is fit between the first crossings of fit_lo_db and
    fit_hi_db (defaults -5 and -35 dB) and extrapolated to -60 dB.
    fs is the rate of the input series (bins per second for power input).
    """
    if fit_hi_db >= fit_lo_db:
        raise ValueError("fit_hi_db must be below fit_lo_db")
    edc = schroeder_decay_db(h, power=power)
    below_lo = np.nonzero(edc <= fit_lo_db)[0]
    below_hi = np.nonzero(edc <= fit_hi_db)[0]
    if len(below_lo) == 0 or len(below_hi) == 0:
        raise ValueError(
            f"decay range [{fit_lo_db}, {fit_hi_db}] dB not reached"
        )
    i0, i1 = below_lo[0], below_hi[0]
    if i1 <= i0 + 1:
        raise ValueError("decay fit range too short")
    t = np.arange(i0, i1 + 1) / fs
    seg = edc[i0 : i1 + 1]
    slope, _ = np.polyfit(t, seg, 1)
    if slope >= 0:
        raise ValueError("non-decaying Schroeder curve")
    return -60.0 / slope
