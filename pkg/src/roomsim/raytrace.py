"""Stochastic ray tracer with diffuse rain.

``trace`` fires directivity-weighted rays from a source and returns one
band-by-time energy echogram per receiver.  Reflected energy reaches
receivers exclusively through diffuse rain: at every surface hit the
scattered share of the surviving energy deposits into each visible
receiver sphere (Lambert cosine times subtended solid angle) and is
removed from the ray.  Purely specular paths therefore never register;
scenes need nonzero scattering for a reverberant tail, which mirrors how
energy-based geometrical acoustics codes behave.  The direct path is
computed analytically (visibility test plus solid-angle fraction), not
via Monte-Carlo crossings, so it carries no variance.

``echogram_to_rir`` turns an echogram into a pressure impulse response
by shaping octave-band noise so each bin reproduces the recorded band
energy; the direct path is rendered as a band-limited pulse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .errors import EngineError
from .geometry import SPEED_OF_SOUND, RoomScene, validate_scene
from .kernels import ray_kernels
from .kernels.ism_kernels import accumulate_impulses
from .rir import Rir, config_hash


@dataclass(frozen=True)
class RtConfig:
    n_rays: int = 100_000
    max_time: float = 1.0
    bin_width: float = 1e-3
    seed: int = 0
    receiver_radius: float = 0.25
    energy_floor_db: float = -60.0
    max_bounces: int = 8192

    def __post_init__(self):
        if self.n_rays < 1:
            raise ValueError("n_rays must be >= 1")
        if self.bin_width <= 0 or self.max_time <= 0:
            raise ValueError("bin_width and max_time must be positive")
        if self.receiver_radius <= 0:
            raise ValueError("receiver_radius must be positive")

    @property
    def n_bins(self) -> int:
        return int(math.ceil(self.max_time / self.bin_width))


@dataclass(frozen=True)
class Echogram:
    """Band-by-bin energy for one receiver, plus the analytic direct path.

    The direct energy is already included in ``bins``; the separate
    fields preserve its exact arrival time and per-band split so RIR
    synthesis can render it as a coherent pulse instead of noise.
    """

    bins: np.ndarray  # [n_bands, n_bins]
    bin_width: float
    direct_time: float
    direct_energy: np.ndarray  # [n_bands]
    receiver_id: str = ""
    stats: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.bins.shape[1] * self.bin_width


def receiver_solid_angle(distance: float, radius: float) -> float:
    """Solid angle subtended by a sphere of given radius at a distance."""
    if distance <= radius:
        return 4.0 * math.pi
    ratio = radius / distance
    return 2.0 * math.pi * (1.0 - math.sqrt(1.0 - ratio * ratio))


def rain_weight(distance: float, cos_incidence: float, radius: float) -> float:
    """Fraction of a Lambertian lobe captured by a receiver sphere."""
    if cos_incidence <= 0.0:
        return 0.0
    w = cos_incidence * receiver_solid_angle(distance, radius) / math.pi
    return min(w, 1.0)


def _surface_tables(scene: RoomScene):
    n_box = len(scene.boxes)
    alpha = np.zeros((6 + n_box, dsp.N_BANDS))
    scat = np.zeros((6 + n_box, dsp.N_BANDS))
    for w in range(6):
        mat = scene.wall_material(w)
        alpha[w] = mat.absorption
        scat[w] = mat.scattering
    for i, box in enumerate(scene.boxes):
        mat = scene.materials[box.material]
        alpha[6 + i] = mat.absorption
        scat[6 + i] = mat.scattering
    return alpha, scat


def _box_rows(scene: RoomScene) -> np.ndarray:
    rows = np.zeros((len(scene.boxes), 6))
    for i, box in enumerate(scene.boxes):
        rows[i, :3] = box.min_corner.as_array()
        rows[i, 3:] = box.max_corner.as_array()
    return rows


def _direct_deposit(scene, source, receiver, boxes, radius):
    src = source.position.as_array()
    rc = receiver.position.as_array()
    delta = rc - src
    dist = float(np.linalg.norm(delta))
    if dist <= 0.0:
        raise EngineError("source and receiver coincide")
    if boxes.shape[0]:
        blocked = ray_kernels._segment_blocked(
            src[None, :], rc[None, :], boxes
        )[0]
        if blocked:
            return dist, 0.0
    gain = source.directivity.gain(delta / dist)
    omega = receiver_solid_angle(dist, radius)
    return dist, gain * gain * omega / (4.0 * math.pi)


def trace(scene: RoomScene, source_id: str, config: RtConfig) -> list[Echogram]:
    """Trace the scene for one source; returns one Echogram per receiver."""
    validate_scene(scene)
    source = scene.source_by_id(source_id)
    room = scene.dims.as_array()
    boxes = _box_rows(scene)
    alpha_surf, scat_surf = _surface_tables(scene)
    rcv_pos = np.stack([r.position.as_array() for r in scene.receivers])

    pattern = 1 if source.directivity.kind == "cardioid" else 0
    basis = ray_kernels.emission_basis(source.directivity.orientation.as_array())
    # per-ray weight: importance sampling leaves each ray with the mean
    # pattern energy; omni total 1, cardioid total 1/3
    w0 = (1.0 / 3.0 if pattern == 1 else 1.0) / config.n_rays
    floor_total = w0 * dsp.N_BANDS * 10.0 ** (config.energy_floor_db / 10.0)

    ech, absorbed, deposited, truncated = ray_kernels.trace_rays(
        config.n_rays,
        np.uint64(config.seed & 0xFFFFFFFFFFFFFFFF),
        source.position.as_array(),
        basis,
        pattern,
        w0,
        room,
        boxes,
        alpha_surf,
        scat_surf,
        rcv_pos,
        config.receiver_radius,
        SPEED_OF_SOUND,
        config.bin_width,
        config.n_bins,
        config.max_time,
        floor_total,
        config.max_bounces,
    )

    emitted = w0 * config.n_rays * dsp.N_BANDS
    stats = {
        "emitted": emitted,
        "absorbed": float(absorbed.sum()),
        "deposited": float(deposited.sum()),
        "truncated": float(truncated[0]),
    }
    balance = stats["absorbed"] + stats["deposited"] + stats["truncated"]
    if not math.isclose(balance, emitted, rel_tol=1e-6):
        raise EngineError(
            f"energy books violated: emitted {emitted}, accounted {balance}"
        )

    out = []
    for i, receiver in enumerate(scene.receivers):
        dist, e_dir = _direct_deposit(
            scene, source, receiver, boxes, config.receiver_radius
        )
        t_dir = dist / SPEED_OF_SOUND
        bins = ech[i]
        direct_energy = np.full(dsp.N_BANDS, e_dir)
        kbin = int(t_dir / config.bin_width)
        if e_dir > 0.0 and kbin < config.n_bins:
            bins = bins.copy()
            bins[:, kbin] += e_dir
        out.append(
            Echogram(
                bins=bins,
                bin_width=config.bin_width,
                direct_time=t_dir,
                direct_energy=direct_energy,
                receiver_id=receiver.id,
                stats=stats,
            )
        )
    return out


def echogram_to_rir(
    echogram: Echogram,
    seed: int,
    sample_rate: float = 16000.0,
    engine: str = "rt",
    provenance: dict | None = None,
) -> Rir:
    """Synthesize a pressure RIR whose band-bin energies match the echogram.

    Per band: unit noise is filtered with the octave bank, then each bin
    is rescaled so its energy equals the echogram entry.  The direct
    path is subtracted from its bin and rendered as a windowed-sinc
    pulse at the exact fractional delay.
    """
    bins = np.asarray(echogram.bins, dtype=np.float64)
    if not np.isfinite(bins).all() or (bins < 0).any():
        raise EngineError("echogram must be finite and non-negative")
    n_bands, n_bins = bins.shape
    fs = float(sample_rate)
    bank = dsp.octave_filterbank(fs)
    spb = echogram.bin_width * fs  # samples per bin, need not be integer
    n_samples = int(round(n_bins * spb))
    h = np.zeros(n_samples)

    shaped = bins.copy()
    kdir = int(echogram.direct_time / echogram.bin_width)
    if kdir < n_bins:
        shaped[:, kdir] = np.maximum(
            shaped[:, kdir] - echogram.direct_energy, 0.0
        )

    edges = np.minimum((np.arange(n_bins + 1) * spb).round().astype(np.int64), n_samples)
    for b in range(n_bands):
        if not shaped[b].any():
            continue
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, b])
        )
        noise = rng.standard_normal(n_samples)
        filtered = bank.apply(noise, b)
        band = np.zeros(n_samples)
        for k in range(n_bins):
            target = shaped[b, k]
            if target <= 0.0:
                continue
            lo, hi = edges[k], edges[k + 1]
            seg = filtered[lo:hi]
            seg_energy = float(seg @ seg)
            if seg_energy <= 0.0:
                continue
            band[lo:hi] = seg * math.sqrt(target / seg_energy)
        h += band

    e_direct = float(echogram.direct_energy.sum())
    if e_direct > 0.0:
        delay = echogram.direct_time * fs
        pulse = accumulate_impulses(
            np.array([delay]), np.array([[1.0]]), n_samples, True
        )[0]
        pulse_energy = float(pulse @ pulse)
        if pulse_energy > 0.0:
            h += pulse * math.sqrt(e_direct / pulse_energy)

    prov = dict(provenance or {})
    prov.setdefault("seed", int(seed))
    prov.setdefault("receiver_id", echogram.receiver_id)
    prov.setdefault("config_hash", config_hash(
        {"bin_width": echogram.bin_width, "n_bins": n_bins, "seed": int(seed)}
    ))
    return Rir(
        samples=h,
        sample_rate=fs,
        engine=engine,
        band_limit_hz=None,
        provenance=prov,
    )


def render_rir_rt(
    scene: RoomScene,
    source_id: str,
    receiver_id: str,
    config: RtConfig,
    sample_rate: float = 16000.0,
) -> Rir:
    """Trace and synthesize in one step for a single receiver."""
    echs = trace(scene, source_id, config)
    by_id = {e.receiver_id: e for e in echs}
    if receiver_id not in by_id:
        raise EngineError(f"unknown receiver {receiver_id!r}")
    prov = {
        "scene": scene.room_id,
        "source_id": source_id,
        "receiver_id": receiver_id,
        "n_rays": config.n_rays,
        "seed": config.seed,
        "config_hash": config_hash(
            {
                "n_rays": config.n_rays,
                "max_time": config.max_time,
                "bin_width": config.bin_width,
                "seed": config.seed,
                "receiver_radius": config.receiver_radius,
                "energy_floor_db": config.energy_floor_db,
            }
        ),
    }
    return echogram_to_rir(
        by_id[receiver_id], config.seed, sample_rate, provenance=prov
    )


def echogram_t60(echogram: Echogram) -> float:
    """T60 fitted on the band-summed echogram decay."""
    total = echogram.bins.sum(axis=0)
    return dsp.fit_t60(total, 1.0 / echogram.bin_width, power=True)
