"""Multichannel WPE dereverberation and the main/support eval protocol.

The dereverberator is offline iterative weighted prediction error: per
STFT bin, late reverberation is modeled as a linear prediction from
delayed frames of all channels and subtracted; the prediction filters
are re-estimated with inverse-variance weights derived from the current
estimate.  Evaluation follows the main/support grouping: every RIR of a
condition serves as the main RIR of exactly one group, supports are
drawn at random from the remaining RIRs of the same condition, the same
utterance drives all channels of a group, and metrics are computed for
the main channel only against a direct-path reference.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.random import default_rng

from . import metrics
from .dsp import AudioBuffer, StftConfig, fft_convolve, istft, stft
from .errors import DegenerateDataError
from .manifest import DatasetManifest, ManifestEntry
from .results import EvalResult
from .rir import load_rir

logger = logging.getLogger(__name__)

N_SUPPORT_MIN = 4
N_SUPPORT_MAX = 12

# direct-path reference window: first 2.5 ms after the direct peak
DIRECT_WINDOW_S = 0.0025

_DIAG_LOAD = 1e-6


@dataclass(frozen=True)
class WpeConfig:
    taps: int = 10
    delay: int = 3  # frames
    iterations: int = 3
    psd_floor: float = 1e-10
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.taps < 1:
            raise ValueError("taps must be >= 1")
        if self.delay < 1:
            raise ValueError("delay must be >= 1 frame")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.psd_floor <= 0:
            raise ValueError("psd_floor must be positive")


@dataclass(frozen=True)
class EvalGroup:
    """One main RIR plus its same-condition support RIRs."""

    main: ManifestEntry
    supports: tuple

    def __post_init__(self):
        object.__setattr__(self, "supports", tuple(self.supports))
        n = len(self.supports)
        if not N_SUPPORT_MIN <= n <= N_SUPPORT_MAX:
            raise ValueError(
                f"need {N_SUPPORT_MIN}..{N_SUPPORT_MAX} supports, got {n}"
            )
        cond = (self.main.engine, self.main.room_id, self.main.condition_id)
        for s in self.supports:
            if s.key == self.main.key:
                raise ValueError("main RIR cannot be its own support")
            if (s.engine, s.room_id, s.condition_id) != cond:
                raise ValueError(
                    f"support {s.key} is not from condition {cond}"
                )
        if len({s.key for s in self.supports}) != n:
            raise ValueError("duplicate support RIRs")


def build_eval_groups(
    manifest: DatasetManifest,
    n_support: int,
    seed: int = 0,
    condition_id: str | None = None,
) -> list:
    """One EvalGroup per manifest entry, that entry as main.

    Supports are drawn uniformly without replacement from the remaining
    entries of the same (engine, room, condition); the draw is
    deterministic for a given manifest order and seed.
    """
    if not N_SUPPORT_MIN <= n_support <= N_SUPPORT_MAX:
        raise ValueError(
            f"n_support must lie in [{N_SUPPORT_MIN}, {N_SUPPORT_MAX}]"
        )
    entries = list(manifest.entries)
    if condition_id is not None:
        entries = [e for e in entries if e.condition_id == condition_id]
    if not entries:
        raise DegenerateDataError("no manifest entries match the condition")

    rng = default_rng(seed)
    groups = []
    for e in entries:
        cond = (e.engine, e.room_id, e.condition_id)
        pool = [
            other
            for other in entries
            if other.key != e.key
            and (other.engine, other.room_id, other.condition_id) == cond
        ]
        if len(pool) < n_support:
            raise DegenerateDataError(
                f"condition {cond} has {len(pool) + 1} entries; "
                f"need more than {n_support}"
            )
        picks = rng.choice(len(pool), size=n_support, replace=False)
        groups.append(
            EvalGroup(main=e, supports=tuple(pool[i] for i in picks))
        )
    return groups


# --------------------------------------------------------------------------
# WPE core


def _stacked_regressor(Y: np.ndarray, taps: int, delay: int) -> np.ndarray:
    """Delayed multichannel frames: [bins, frames, channels * taps].

    Column (c * taps + k) holds channel c delayed by (delay + k) frames;
    frames before the signal start stay zero.
    """
    n_bins, n_frames, n_ch = Y.shape
    out = np.zeros((n_bins, n_frames, n_ch * taps), dtype=Y.dtype)
    for c in range(n_ch):
        for k in range(taps):
            d = delay + k
            if d < n_frames:
                out[:, d:, c * taps + k] = Y[:, : n_frames - d, c]
    return out


def wpe_dereverb(
    channels: np.ndarray,
    sample_rate: int = 16000,
    config: WpeConfig = WpeConfig(),
) -> AudioBuffer:
    """Dereverberate channel 1 of a synchronous multichannel capture.

    Per frequency bin and iteration: (1) the time-varying PSD estimate
    lambda_t is the channel-mean squared magnitude of the current
    estimate, floored; (2) prediction filters over the delayed frames of
    all channels solve the lambda-weighted normal equations with
    relative diagonal loading; (3) the prediction is subtracted from the
    observation.  Output is the inverse STFT of the final first-channel
    estimate, trimmed to the input length.

    The capture is normalized to unit RMS internally and the output is
    scaled back, so the result is invariant to the input scale up to
    rounding and ``psd_floor`` acts relative to the overall signal
    level rather than in absolute units.
    """
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim != 2:
        raise ValueError("channels must be [n_channels, n_samples]")
    n_ch, n_samples = channels.shape
    if n_ch < 2:
        raise ValueError("WPE needs at least 2 channels")
    if not np.any(channels):
        raise DegenerateDataError("all-zero multichannel input")
    scale = float(np.sqrt(np.mean(channels**2)))
    channels = channels / scale
    # tail guard: the last (frame - hop) samples of a weighted
    # overlap-add reconstruction see partial frame coverage, which
    # amplifies per-frame modifications; zero-padding pushes that edge
    # past the real signal and the trim below discards it
    channels = np.pad(channels, ((0, 0), (0, config.stft.frame)))

    # (bins, frames, channels)
    Y = np.stack(
        [stft(ch, config.stft) for ch in channels], axis=0
    ).transpose(2, 1, 0)
    Ytil = _stacked_regressor(Y, config.taps, config.delay)
    m = Ytil.shape[2]
    eye = np.eye(m)

    X = Y.copy()
    objective = []
    for _ in range(config.iterations):
        lam = np.maximum(
            config.psd_floor, (np.abs(X) ** 2).mean(axis=2)
        )  # (bins, frames)
        w = 1.0 / lam
        Yw = Ytil * w[:, :, None]
        R = np.matmul(Yw.transpose(0, 2, 1), Ytil.conj())
        P = np.matmul(Yw.transpose(0, 2, 1), Y.conj())
        trace = np.einsum("fmm->f", R).real
        load = np.where(trace > 0.0, _DIAG_LOAD * trace / m, 1.0)
        G = np.linalg.solve(R + load[:, None, None] * eye, P)
        X = Y - np.matmul(Ytil, G.conj())
        objective.append(
            float(((np.abs(X) ** 2).mean(axis=2) / lam + np.log(lam)).sum())
        )
    # monotonicity of the objective is not guaranteed per iteration in
    # finite precision, so it is logged rather than asserted
    logger.debug("wpe objective per iteration: %s", objective)

    out = istft(X[:, :, 0].T, config.stft, length=n_samples) * scale
    return AudioBuffer(samples=out, sample_rate=sample_rate)


# --------------------------------------------------------------------------
# Evaluation pipeline

# registry of metrics computable from (processed, reference, rate); the
# eval loop emits one row per group per registered name requested
METRIC_FUNCS = {
    "estoi": lambda out, ref, fs: metrics.estoi(
        AudioBuffer(ref, fs), AudioBuffer(out, fs)
    ),
    "si_sdr": lambda out, ref, fs: metrics.si_sdr(out, ref),
}


def direct_path_reference(
    utterance: np.ndarray, h: np.ndarray, sample_rate: int
) -> np.ndarray:
    """Convolve with the direct-path-only RIR, keeping the time axis.

    The direct path is the first 2.5 ms from the RIR peak; all other
    taps are zeroed so the reference stays aligned with the full
    convolution sample-for-sample.
    """
    h = np.asarray(h, dtype=np.float64)
    if not np.any(h):
        raise DegenerateDataError("RIR is all zero")
    i0 = int(np.argmax(np.abs(h)))
    width = max(1, int(round(DIRECT_WINDOW_S * sample_rate)))
    windowed = np.zeros_like(h)
    windowed[i0 : i0 + width] = h[i0 : i0 + width]
    return fft_convolve(utterance, windowed)


def _load_rir_samples(entry: ManifestEntry, base_dir) -> tuple:
    path = entry.rir_path
    if base_dir is not None and not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    r = load_rir(path)
    return r.samples, r.sample_rate


def group_mixture(
    group: EvalGroup, utterance: AudioBuffer, base_dir=None
) -> tuple:
    """Synchronous multichannel capture plus its scoring reference.

    Channel 0 is the main RIR, the rest the supports, all convolved
    with the same utterance.  The reference is the utterance through
    the direct-path-only main RIR, padded to the mixture length.
    """
    fs = utterance.sample_rate
    main_h, main_fs = _load_rir_samples(group.main, base_dir)
    if main_fs != fs:
        raise ValueError(
            f"RIR rate {main_fs} != corpus rate {fs} for {group.main.key}"
        )
    rir_samples = [main_h]
    for s in group.supports:
        h, h_fs = _load_rir_samples(s, base_dir)
        if h_fs != fs:
            raise ValueError(f"RIR rate {h_fs} != corpus rate {fs}")
        rir_samples.append(h)

    n_out = len(utterance.samples) + max(len(h) for h in rir_samples) - 1
    mixture = np.zeros((len(rir_samples), n_out))
    for ci, h in enumerate(rir_samples):
        y = fft_convolve(utterance.samples, h)
        mixture[ci, : len(y)] = y
    ref = direct_path_reference(utterance.samples, main_h, fs)
    return mixture, np.pad(ref, (0, n_out - len(ref)))


def run_dereverb_eval(
    manifest: DatasetManifest,
    corpus,
    config: WpeConfig = WpeConfig(),
    n_support: int = 4,
    seed: int = 0,
    metrics_list: tuple = ("estoi", "si_sdr"),
    algorithm: str = "wpe",
    base_dir=None,
    condition_id: str | None = None,
    include_unprocessed: bool = False,
    self_check: bool = False,
) -> list:
    """Full grouped evaluation: convolve, dereverb, score.

    For each group the round-robin (seed-rotated) corpus utterance is
    convolved with the main and support RIRs into a synchronous
    multichannel mixture, WPE dereverbs it, and each requested metric is
    scored against the direct-path reference of the main RIR: one row
    per (group, metric).  ``include_unprocessed`` adds rows scoring the
    raw first channel (algorithm 'input'); ``self_check`` scores the
    reference against itself instead of running WPE (algorithm
    'self_check').
    """
    corpus = list(corpus)
    if not corpus:
        raise DegenerateDataError("empty speech corpus")
    for name in metrics_list:
        if name not in METRIC_FUNCS:
            raise ValueError(
                f"metric {name!r} not computable here; "
                f"registered: {sorted(METRIC_FUNCS)}"
            )
    groups = build_eval_groups(
        manifest, n_support=n_support, seed=seed, condition_id=condition_id
    )
    rotation = seed % len(corpus)

    rows = []
    for gi, group in enumerate(groups):
        utt = corpus[(gi + rotation) % len(corpus)]
        fs = utt.sample_rate
        mixture, ref = group_mixture(group, utt, base_dir)

        if self_check:
            processed, label = ref, "self_check"
        else:
            processed = wpe_dereverb(mixture, fs, config).samples
            label = algorithm
        scored = [(label, processed)]
        if include_unprocessed and not self_check:
            scored.append(("input", mixture[0]))

        for alg, signal in scored:
            for name in metrics_list:
                mv = METRIC_FUNCS[name](signal, ref, fs)
                rows.append(
                    EvalResult(
                        engine=group.main.engine,
                        room_id=group.main.room_id,
                        condition_id=group.main.condition_id,
                        source_id=group.main.source_id,
                        receiver_id=group.main.receiver_id,
                        algorithm=alg,
                        metric=mv.name,
                        value=mv.value,
                    )
                )
    return rows
