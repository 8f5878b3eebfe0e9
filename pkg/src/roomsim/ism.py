"""Image source engine for empty shoebox rooms.

Mirror-image lattice over reflection index r and parity p per axis:
image position is (1 - 2p) * (source + 2 r L); the wall at the origin
side is hit |r + p| times and the far wall |r| times.  Amplitude is
1/d times the product of per-band reflection gains sqrt(1 - alpha) per
bounce, times the (mirrored) source directivity toward the receiver.
Contributions land on an 81-tap windowed-sinc fractional delay (or the
nearest sample when fractional delay is disabled) and are band-shaped
by the amplitude-complementary octave filterbank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dsp
from .errors import EngineError
from .geometry import RoomScene, Receiver, Source, Vec3, validate_scene
from .kernels.ism_kernels import accumulate_impulses
from .rir import Rir, config_hash


@dataclass(frozen=True)
class IsmConfig:
    max_order: int = 40
    sample_rate: int = 16000
    duration: float = 1.0
    fractional_delay: bool = True
    air_absorption: bool = False
    band_limit_hz: float | None = None  # optional lowpass cap on output

    def __post_init__(self):
        if self.max_order < 0:
            raise ValueError("max_order must be >= 0")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ValueError("duration and sample_rate must be positive")


@dataclass(frozen=True)
class ImageSource:
    """One mirror image: lattice index, geometry and reflection gains."""

    position: Vec3
    order: int
    band_gains: tuple  # cumulative per-band reflection gain
    lattice_r: tuple  # (rx, ry, rz)
    parity: tuple  # (px, py, pz): odd/even mirror count per axis


def _axis_combos(max_order: int):
    """Per-axis (r, p, near_count, far_count, order) with order <= max."""
    out = []
    r_max = (max_order + 1) // 2 + 1
    for r in range(-r_max, r_max + 1):
        for p in (0, 1):
            near = abs(r + p)
            far = abs(r)
            if near + far <= max_order:
                out.append((r, p, near, far, near + far))
    return out


def image_lattice(dims: Vec3, source: Vec3, max_order: int):
    """Vectorized image enumeration.

    Returns (positions [n,3], near [n,3], far [n,3], parity [n,3],
    order [n]) sorted by lattice index (rx, px, ry, py, rz, pz).
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    axes = []
    for ext, s in ((dims.x, source.x), (dims.y, source.y), (dims.z, source.z)):
        combos = _axis_combos(max_order)
        arr = np.array(combos, dtype=np.float64)
        r, p = arr[:, 0], arr[:, 1]
        pos = (1.0 - 2.0 * p) * (s + 2.0 * r * ext)
        axes.append(
            {
                "r": r.astype(np.int64),
                "p": p.astype(np.int64),
                "near": arr[:, 2].astype(np.int64),
                "far": arr[:, 3].astype(np.int64),
                "order": arr[:, 4].astype(np.int64),
                "pos": pos,
            }
        )

    ax, ay, az = axes
    # pairwise prune on x+y order before expanding z
    ox = ax["order"][:, None] + ay["order"][None, :]
    keep = ox <= max_order
    ix, iy = np.nonzero(keep)
    oxy = ox[keep]
    oz = az["order"]
    full = oxy[:, None] + oz[None, :] <= max_order
    ixy, iz = np.nonzero(full)
    ix, iy = ix[ixy], iy[ixy]

    def gather(field):
        return np.stack(
            [ax[field][ix], ay[field][iy], az[field][iz]], axis=1
        )

    positions = np.stack(
        [ax["pos"][ix], ay["pos"][iy], az["pos"][iz]], axis=1
    )
    near = gather("near")
    far = gather("far")
    parity = gather("p")
    lattice_r = gather("r")
    order = near.sum(axis=1) + far.sum(axis=1)

    sort_key = np.lexsort(
        (
            parity[:, 2], lattice_r[:, 2],
            parity[:, 1], lattice_r[:, 1],
            parity[:, 0], lattice_r[:, 0],
        )
    )
    return (
        positions[sort_key],
        near[sort_key],
        far[sort_key],
        parity[sort_key],
        lattice_r[sort_key],
        order[sort_key],
    )


def _band_gains(scene: RoomScene, near, far) -> np.ndarray:
    """Cumulative per-band reflection gain per image: [n, n_bands]."""
    n = near.shape[0]
    gains = np.ones((n, dsp.N_BANDS), dtype=np.float64)
    # wall order (-x,+x,-y,+y,-z,+z); near counts hit the minus walls
    for axis in range(3):
        for side, counts in ((0, near[:, axis]), (1, far[:, axis])):
            mat = scene.wall_material(2 * axis + side)
            refl = np.sqrt(1.0 - np.asarray(mat.absorption))
            gains *= refl[None, :] ** counts[:, None]
    return gains


def compute_images(
    dims: Vec3, source_pos: Vec3, max_order: int,
    scene: RoomScene | None = None,
) -> list[ImageSource]:
    """Enumerate images up to max_order, sorted by lattice index.

    Band gains need wall materials: without a scene they default to
    rigid walls (gain 1 per band).
    """
    positions, near, far, parity, lattice_r, order = image_lattice(
        dims, source_pos, max_order
    )
    if scene is not None:
        gains = _band_gains(scene, near, far)
    else:
        gains = np.ones((len(order), dsp.N_BANDS))
    return [
        ImageSource(
            position=Vec3.of(positions[i]),
            order=int(order[i]),
            band_gains=tuple(gains[i]),
            lattice_r=tuple(int(v) for v in lattice_r[i]),
            parity=tuple(int(v) for v in parity[i]),
        )
        for i in range(len(order))
    ]


# ISO 9613-1 style air attenuation at 20 C, 50% relative humidity,
# evaluated at the octave band centers (dB/m).
def _air_attenuation_db_per_m() -> np.ndarray:
    t = 293.15
    t0 = 293.15
    t01 = 273.16
    psat = 10.0 ** (-6.8346 * (t01 / t) ** 1.261 + 4.6151)
    h = 50.0 * psat  # molar concentration of water vapor, percent
    fr_o = 24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h)
    fr_n = (t / t0) ** -0.5 * (
        9.0 + 280.0 * h * math.exp(-4.170 * ((t / t0) ** (-1.0 / 3.0) - 1.0))
    )
    f = np.asarray(dsp.OCTAVE_CENTERS_HZ)
    term_o = 0.01275 * math.exp(-2239.1 / t) / (fr_o + f**2 / fr_o)
    term_n = 0.1068 * math.exp(-3352.0 / t) / (fr_n + f**2 / fr_n)
    return (
        8.686 * f**2 * (1.84e-11 * (t / t0) ** 0.5 + term_o + term_n)
    )


AIR_ATTENUATION_DB_PER_M = _air_attenuation_db_per_m()


def render_rir_ism(
    scene: RoomScene,
    source: Source | str,
    receiver: Receiver | str,
    config: IsmConfig = IsmConfig(),
) -> Rir:
    """Render one RIR with the image source method."""
    validate_scene(scene)
    if scene.boxes:
        raise EngineError(
            "image source engine requires an empty shoebox (no boxes)"
        )
    if isinstance(source, str):
        source = scene.source_by_id(source)
    if isinstance(receiver, str):
        receiver = scene.receiver_by_id(receiver)

    c = scene.speed_of_sound
    fs = config.sample_rate
    rcv = receiver.position.as_array()
    direct_delay = receiver.position.distance_to(source.position) / c
    if config.duration <= direct_delay:
        raise EngineError(
            f"duration {config.duration}s ends before the direct path "
            f"arrives ({direct_delay:.6f}s)"
        )

    positions, near, far, parity, _, order = image_lattice(
        scene.dims, source.position, config.max_order
    )
    diff = rcv[None, :] - positions
    dists = np.sqrt((diff**2).sum(axis=1))
    # guard: receiver coinciding with an image would divide by zero
    dists = np.maximum(dists, 1e-9)
    keep = dists / c <= config.duration
    positions, near, far, parity = (
        positions[keep], near[keep], far[keep], parity[keep],
    )
    diff, dists = diff[keep], dists[keep]

    gains = _band_gains(scene, near, far)
    amps = gains / dists[:, None]

    if source.directivity.kind != "omni":
        orient = source.directivity.orientation.as_array()
        mirrored = orient[None, :] * (1.0 - 2.0 * parity)
        cos_t = (mirrored * (diff / dists[:, None])).sum(axis=1)
        amps = amps * (0.5 * (1.0 + cos_t))[:, None]

    if config.air_absorption:
        amps = amps * 10.0 ** (
            -AIR_ATTENUATION_DB_PER_M[None, :] * dists[:, None] / 20.0
        )

    n_out = int(round(config.duration * fs))
    delays = dists / c * fs
    trains = accumulate_impulses(
        delays, amps, n_out, config.fractional_delay
    )

    bank = dsp.octave_filterbank(fs)
    samples = np.zeros(n_out)
    for b in range(bank.n_bands):
        samples += bank.apply(trains[b], b)

    band_limit = fs / 2.0
    if config.band_limit_hz is not None and config.band_limit_hz < band_limit:
        samples = dsp.lowpass(samples, fs, config.band_limit_hz)
        band_limit = config.band_limit_hz

    return Rir(
        samples=samples,
        sample_rate=fs,
        engine="ism",
        band_limit_hz=band_limit,
        provenance={
            "engine": "ism",
            "room_id": scene.room_id,
            "source_id": source.id,
            "receiver_id": receiver.id,
            "config_hash": config_hash(vars(config)),
            "max_order": config.max_order,
            "n_images": int(len(dists)),
        },
    )
