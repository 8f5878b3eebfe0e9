"""RIR container and WAV + sidecar-JSON persistence.

RIRs are written as mono float32 WAV with a .json sidecar carrying the
provenance record (engine, scene/config hashes, seed, ids, band limit).
Readers accept PCM16, PCM24 and float32 mono WAV; integer formats are
normalized to full-scale [-1, 1) floats.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.io.wavfile

from .version import __version__


@dataclass(frozen=True)
class Rir:
    """One room impulse response plus its provenance."""

    samples: np.ndarray
    sample_rate: int
    engine: str
    band_limit_hz: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=np.float64)
        )
        if self.samples.ndim != 1:
            raise ValueError("RIR must be mono (1-D samples)")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serializable config description."""

    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if hasattr(o, "__dict__"):
            return vars(o)
        return repr(o)

    blob = json.dumps(obj, sort_keys=True, default=default)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_wav(path, samples: np.ndarray, sample_rate: int,
              subtype: str = "float32") -> None:
    samples = np.asarray(samples)
    if samples.ndim == 1:
        data = samples
    elif samples.ndim == 2:
        data = samples.T  # channels-first in, frames x channels on disk
    else:
        raise ValueError("samples must be 1-D or [channels, n]")
    if subtype == "float32":
        scipy.io.wavfile.write(path, int(sample_rate),
                               data.astype(np.float32))
    elif subtype == "pcm16":
        clipped = np.clip(data, -1.0, 32767.0 / 32768.0)
        scipy.io.wavfile.write(
            path, int(sample_rate),
            np.round(clipped * 32768.0).astype(np.int16),
        )
    else:
        raise ValueError(f"unsupported WAV subtype {subtype!r}")


def read_wav(path) -> tuple[int, np.ndarray]:
    """Read a WAV file, normalizing integer PCM to float64 in [-1, 1).

    Returns (sample_rate, samples); samples is 1-D for mono files and
    [channels, n] for multichannel.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    sample_rate, data = scipy.io.wavfile.read(path)
    if data.dtype == np.int16:
        out = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy loads 24-bit PCM as int32 shifted into the high bytes,
        # so full-scale normalization is shared with true 32-bit files
        out = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        out = data.astype(np.float64)
    elif data.dtype == np.uint8:
        out = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise ValueError(f"unsupported WAV dtype {data.dtype} in {path}")
    if out.ndim == 2:
        out = out.T
    return int(sample_rate), out


def save_rir(r: Rir, path) -> None:
    """Write RIR as float32 WAV with a .json provenance sidecar."""
    write_wav(path, r.samples, r.sample_rate, subtype="float32")
    sidecar = {
        "engine": r.engine,
        "sample_rate": r.sample_rate,
        "band_limit_hz": r.band_limit_hz,
        "n_samples": len(r.samples),
        "tool_version": __version__,
        "provenance": r.provenance,
    }
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_rir(path) -> Rir:
    sample_rate, samples = read_wav(path)
    if samples.ndim != 1:
        raise ValueError(f"RIR file {path} is not mono")
    sidecar_path = str(path) + ".json"
    engine, band_limit, provenance = "unknown", float("nan"), {}
    if os.path.exists(sidecar_path):
        with open(sidecar_path) as f:
            sidecar = json.load(f)
        engine = sidecar.get("engine", engine)
        band_limit = sidecar.get("band_limit_hz", band_limit)
        provenance = sidecar.get("provenance", {})
    return Rir(
        samples=samples,
        sample_rate=sample_rate,
        engine=engine,
        band_limit_hz=band_limit,
        provenance=provenance,
    )
