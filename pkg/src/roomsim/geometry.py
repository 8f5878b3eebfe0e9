"""Scene description: shoebox room, materials, sources, receivers.

Axis convention: the room occupies [0, Lx] x [0, Ly] x [0, Lz].  Wall
order everywhere is (-x, +x, -y, +y, -z, +z).  Positions are in meters.
Scene objects are frozen dataclasses; build a new scene instead of
mutating one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dsp import N_BANDS, OCTAVE_CENTERS_HZ

SPEED_OF_SOUND = 343.0
MIN_CLEARANCE = 0.1  # meters between any source/receiver and any surface

WALL_NAMES = ("-x", "+x", "-y", "+y", "-z", "+z")


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def of(seq) -> "Vec3":
        x, y, z = (float(v) for v in seq)
        return Vec3(x, y, z)

    def distance_to(self, other: "Vec3") -> float:
        return math.sqrt(
            (self.x - other.x) ** 2
            + (self.y - other.y) ** 2
            + (self.z - other.z) ** 2
        )


@dataclass(frozen=True)
class Material:
    """Per-octave-band surface description.

    absorption: energy absorption coefficient per band, in [0, 1].
    scattering: fraction of reflected energy scattered diffusely, [0, 1].
    impedance: optional per-band complex surface impedance (ratio to
    rho*c).  Engines that only accept real admittance reduce it to its
    real part; see the FDTD module.
    """

    name: str
    absorption: tuple
    scattering: tuple = (0.0,) * N_BANDS
    impedance: tuple | None = None

    def __post_init__(self):
        for label, vals in (("absorption", self.absorption),
                            ("scattering", self.scattering)):
            vals = tuple(float(v) for v in vals)
            object.__setattr__(self, label, vals)
            if len(vals) != N_BANDS:
                raise ValueError(
                    f"{self.name}: {label} needs {N_BANDS} band values"
                )
            if any(not 0.0 <= v <= 1.0 for v in vals):
                raise ValueError(f"{self.name}: {label} outside [0, 1]")
        if self.impedance is not None:
            imp = tuple(complex(v) for v in self.impedance)
            object.__setattr__(self, "impedance", imp)
            if len(imp) != N_BANDS:
                raise ValueError(
                    f"{self.name}: impedance needs {N_BANDS} band values"
                )

    def mean_absorption(self) -> float:
        return float(np.mean(self.absorption))


@dataclass(frozen=True)
class Directivity:
    """Source directivity: 'omni' or 'cardioid'.

    Cardioid amplitude gain is (1 + cos theta) / 2 where theta is the
    angle between the orientation and the emission direction.
    """

    kind: str = "omni"
    orientation: Vec3 = Vec3(1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("omni", "cardioid"):
            raise ValueError(f"unknown directivity kind {self.kind!r}")
        n = self.orientation.as_array()
        norm = float(np.linalg.norm(n))
        if norm <= 0.0:
            raise ValueError("directivity orientation must be non-zero")
        object.__setattr__(self, "orientation", Vec3.of(n / norm))

    def gain(self, direction: np.ndarray) -> float:
        """Amplitude gain toward a unit emission direction."""
        if self.kind == "omni":
            return 1.0
        cos_t = float(np.dot(self.orientation.as_array(), direction))
        return 0.5 * (1.0 + cos_t)


@dataclass(frozen=True)
class Source:
    id: str
    position: Vec3
    directivity: Directivity = Directivity()


@dataclass(frozen=True)
class Receiver:
    id: str
    position: Vec3
    radius: float = 0.25  # detection sphere for the ray tracer


@dataclass(frozen=True)
class Box:
    """Axis-aligned interior obstacle (furniture, brick pile)."""

    min_corner: Vec3
    max_corner: Vec3
    material: str

    def __post_init__(self):
        lo, hi = self.min_corner, self.max_corner
        if not (lo.x < hi.x and lo.y < hi.y and lo.z < hi.z):
            raise ValueError("box must have positive extent on every axis")

    def contains(self, p: Vec3, pad: float = 0.0) -> bool:
        lo, hi = self.min_corner, self.max_corner
        return (
            lo.x - pad <= p.x <= hi.x + pad
            and lo.y - pad <= p.y <= hi.y + pad
            and lo.z - pad <= p.z <= hi.z + pad
        )

    def distance_to(self, p: Vec3) -> float:
        """Euclidean distance from a point to the box (0 inside)."""
        lo, hi = self.min_corner, self.max_corner
        dx = max(lo.x - p.x, 0.0, p.x - hi.x)
        dy = max(lo.y - p.y, 0.0, p.y - hi.y)
        dz = max(lo.z - p.z, 0.0, p.z - hi.z)
        return math.sqrt(dx * dx + dy * dy + dz * dz)

    def as_bounds(self) -> np.ndarray:
        return np.array(
            [
                self.min_corner.x, self.max_corner.x,
                self.min_corner.y, self.max_corner.y,
                self.min_corner.z, self.max_corner.z,
            ],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class RoomScene:
    room_id: str
    dims: Vec3
    materials: dict  # name -> Material
    wall_materials: tuple  # six names in WALL_NAMES order
    sources: tuple = ()
    receivers: tuple = ()
    boxes: tuple = ()
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "receivers", tuple(self.receivers))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(
            self, "wall_materials", tuple(self.wall_materials)
        )

    @property
    def volume(self) -> float:
        d = self.dims
        return d.x * d.y * d.z

    @property
    def surface_area(self) -> float:
        d = self.dims
        return 2.0 * (d.x * d.y + d.x * d.z + d.y * d.z)

    def wall_material(self, wall: int) -> Material:
        return self.materials[self.wall_materials[wall]]

    def source_by_id(self, source_id: str) -> Source:
        for s in self.sources:
            if s.id == source_id:
                return s
        raise KeyError(f"no source {source_id!r} in scene {self.room_id!r}")

    def receiver_by_id(self, receiver_id: str) -> Receiver:
        for r in self.receivers:
            if r.id == receiver_id:
                return r
        raise KeyError(
            f"no receiver {receiver_id!r} in scene {self.room_id!r}"
        )


class SceneError(ValueError):
    """Scene fails a geometric or material constraint."""


def _check_point(scene: RoomScene, p: Vec3, label: str) -> None:
    d = scene.dims
    for axis, (v, ext) in enumerate(((p.x, d.x), (p.y, d.y), (p.z, d.z))):
        if v < MIN_CLEARANCE or v > ext - MIN_CLEARANCE:
            raise SceneError(
                f"{label} at ({p.x}, {p.y}, {p.z}) violates {MIN_CLEARANCE} m "
                f"wall clearance on axis {axis}"
            )
    for i, box in enumerate(scene.boxes):
        if box.distance_to(p) < MIN_CLEARANCE:
            raise SceneError(
                f"{label} at ({p.x}, {p.y}, {p.z}) violates {MIN_CLEARANCE} m "
                f"clearance to box {i}"
            )


def _boxes_overlap(a: Box, b: Box) -> bool:
    # touching faces are allowed: only strict interior overlap counts
    return (
        a.min_corner.x < b.max_corner.x and b.min_corner.x < a.max_corner.x
        and a.min_corner.y < b.max_corner.y and b.min_corner.y < a.max_corner.y
        and a.min_corner.z < b.max_corner.z and b.min_corner.z < a.max_corner.z
    )


def validate_scene(scene: RoomScene) -> None:
    """Raise SceneError on any constraint violation; silent when valid."""
    d = scene.dims
    if not (d.x > 0 and d.y > 0 and d.z > 0):
        raise SceneError("room dims must be positive")
    if scene.speed_of_sound <= 0:
        raise SceneError("speed of sound must be positive")
    if len(scene.wall_materials) != 6:
        raise SceneError("need six wall material names")
    for name in scene.wall_materials:
        if name not in scene.materials:
            raise SceneError(f"wall material {name!r} not defined")
    for i, box in enumerate(scene.boxes):
        if box.material not in scene.materials:
            raise SceneError(f"box {i} material {box.material!r} not defined")
        lo, hi = box.min_corner, box.max_corner
        if (
            lo.x < 0 or lo.y < 0 or lo.z < 0
            or hi.x > d.x or hi.y > d.y or hi.z > d.z
        ):
            raise SceneError(f"box {i} extends outside the room")
    for i in range(len(scene.boxes)):
        for j in range(i + 1, len(scene.boxes)):
            if _boxes_overlap(scene.boxes[i], scene.boxes[j]):
                raise SceneError(f"boxes {i} and {j} overlap")
    ids = [s.id for s in scene.sources] + [r.id for r in scene.receivers]
    if len(set(ids)) != len(ids):
        raise SceneError("source/receiver ids must be unique")
    for s in scene.sources:
        _check_point(scene, s.position, f"source {s.id!r}")
    for r in scene.receivers:
        _check_point(scene, r.position, f"receiver {r.id!r}")


def make_receiver_grid(
    dims: Vec3, spacing: float, height: float
) -> list[Vec3]:
    """Horizontal measurement grid at a fixed height.

    Points start at margin = max(0.1 m, spacing / 2) from each wall and
    advance by `spacing` while strictly below dim - margin, so the grid
    is symmetric only when the room length is an exact multiple.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if not MIN_CLEARANCE <= height <= dims.z - MIN_CLEARANCE:
        raise ValueError(
            f"height {height} violates {MIN_CLEARANCE} m floor/ceiling "
            "clearance"
        )
    margin = max(MIN_CLEARANCE, spacing / 2.0)
    points = []
    for ext in (dims.x, dims.y):
        axis_pts = []
        v = margin
        while v < ext - margin:
            axis_pts.append(v)
            v += spacing
        if not axis_pts:
            raise ValueError(
                f"spacing {spacing} leaves no grid points in extent {ext}"
            )
        points.append(axis_pts)
    xs, ys = points
    return [Vec3(x, y, height) for x in xs for y in ys]


def eyring_t60(scene_or_dims, absorption: float) -> float:
    """Eyring reverberation time for a uniform mean absorption."""
    if isinstance(scene_or_dims, RoomScene):
        v = scene_or_dims.volume
        s = scene_or_dims.surface_area
    else:
        d = scene_or_dims
        v = d.x * d.y * d.z
        s = 2.0 * (d.x * d.y + d.x * d.z + d.y * d.z)
    if not 0.0 < absorption < 1.0:
        raise ValueError("Eyring formula needs absorption in (0, 1)")
    return 0.161 * v / (-s * math.log(1.0 - absorption))


# ---------------------------------------------------------------------------
# Voxelization


@dataclass(frozen=True)
class VoxelGrid:
    """Cell-centered voxelization of a scene.

    air[i, j, k] is True for acoustically open cells.  face_beta holds
    the real specific admittance seen by each air cell on each of its
    six faces (wall order), non-zero only where the face meets a solid
    cell or the exterior.
    """

    dx: float
    shape: tuple
    air: np.ndarray
    face_beta: np.ndarray  # (6, nx, ny, nz)

    @property
    def n_air(self) -> int:
        return int(self.air.sum())

    def air_volume(self) -> float:
        return self.n_air * self.dx**3


def admittance_from_absorption(alpha: float) -> float:
    """Real specific admittance giving normal-incidence absorption alpha.

    Inverts alpha = 4 beta / (1 + beta)^2, taking the beta <= 1 branch.
    alpha = 1 maps to the matched boundary beta = 1; alpha = 0 is rigid.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("absorption must be in [0, 1]")
    if alpha == 0.0:
        return 0.0
    return (2.0 - alpha - 2.0 * math.sqrt(1.0 - alpha)) / alpha


def _axis_cells(extent: float, dx: float) -> int:
    n_exact = extent / dx
    n = int(round(n_exact))
    if abs(n_exact - n) < 1e-9:
        return n
    return int(math.ceil(n_exact))


def voxelize(scene: RoomScene, dx: float, band: int | None = None) -> VoxelGrid:
    """Cell-centered voxelization at resolution dx.

    A cell is air when its center lies inside the room and outside every
    box.  Face admittances come from the adjacent surface's material:
    `band` selects one octave band's absorption, None uses the band
    mean.  Requires dx <= min(dims) / 4 so every dimension spans at
    least four cells.
    """
    d = scene.dims
    min_dim = min(d.x, d.y, d.z)
    if dx <= 0:
        raise ValueError("dx must be positive")
    if dx > min_dim / 4.0:
        raise ValueError(
            f"dx={dx} too coarse: must be <= min(dims)/4 = {min_dim / 4.0}"
        )
    nx, ny, nz = (_axis_cells(e, dx) for e in (d.x, d.y, d.z))

    cx = (np.arange(nx) + 0.5) * dx
    cy = (np.arange(ny) + 0.5) * dx
    cz = (np.arange(nz) + 0.5) * dx
    in_room = (
        (cx[:, None, None] <= d.x)
        & (cy[None, :, None] <= d.y)
        & (cz[None, None, :] <= d.z)
    )
    air = np.broadcast_to(in_room, (nx, ny, nz)).copy()

    # box occupancy per cell center, remembering which box claimed it
    owner = np.full((nx, ny, nz), -1, dtype=np.int32)
    for bi, box in enumerate(scene.boxes):
        lo, hi = box.min_corner, box.max_corner
        mx = (cx >= lo.x) & (cx <= hi.x)
        my = (cy >= lo.y) & (cy <= hi.y)
        mz = (cz >= lo.z) & (cz <= hi.z)
        inside = mx[:, None, None] & my[None, :, None] & mz[None, None, :]
        owner[inside] = bi
        air[inside] = False

    def beta_of(material: Material) -> float:
        if band is None:
            alpha = material.mean_absorption()
        else:
            alpha = material.absorption[band]
        return admittance_from_absorption(alpha)

    wall_beta = [beta_of(scene.wall_material(w)) for w in range(6)]
    box_beta = [beta_of(scene.materials[b.material]) for b in scene.boxes]

    face_beta = np.zeros((6, nx, ny, nz), dtype=np.float64)
    faces = [(-1, 0), (1, 0), (-1, 1), (1, 1), (-1, 2), (1, 2)]
    for face, (sign, axis) in enumerate(faces):
        shifted_air = np.roll(air, -sign, axis=axis)
        shifted_owner = np.roll(owner, -sign, axis=axis)
        # cells whose neighbor in this direction left the grid
        at_edge = np.zeros((nx, ny, nz), dtype=bool)
        idx = [slice(None)] * 3
        idx[axis] = 0 if sign < 0 else -1
        at_edge[tuple(idx)] = True

        solid_neighbor = air & ~at_edge & ~shifted_air
        beta = np.zeros((nx, ny, nz), dtype=np.float64)
        beta[air & at_edge] = wall_beta[face]
        if scene.boxes:
            bb = np.array(box_beta, dtype=np.float64)
            from_box = solid_neighbor & (shifted_owner >= 0)
            beta[from_box] = bb[shifted_owner[from_box]]
        # solid neighbor outside any box means outside the room slab
        from_room = solid_neighbor & (shifted_owner < 0)
        beta[from_room] = wall_beta[face]
        face_beta[face] = beta

    return VoxelGrid(dx=dx, shape=(nx, ny, nz), air=air, face_beta=face_beta)


# ---------------------------------------------------------------------------
# Scene JSON


def scene_to_dict(scene: RoomScene) -> dict:
    def mat(m: Material) -> dict:
        out = {
            "absorption": list(m.absorption),
            "scattering": list(m.scattering),
        }
        if m.impedance is not None:
            out["impedance"] = [[z.real, z.imag] for z in m.impedance]
        return out

    out = {
        "room_id": scene.room_id,
        "dims": [scene.dims.x, scene.dims.y, scene.dims.z],
        "speed_of_sound": scene.speed_of_sound,
        "materials": {n: mat(m) for n, m in sorted(scene.materials.items())},
        "wall_materials": list(scene.wall_materials),
        "boxes": [
            {
                "min": [b.min_corner.x, b.min_corner.y, b.min_corner.z],
                "max": [b.max_corner.x, b.max_corner.y, b.max_corner.z],
                "material": b.material,
            }
            for b in scene.boxes
        ],
        "sources": [
            {
                "id": s.id,
                "position": [s.position.x, s.position.y, s.position.z],
                "directivity": {
                    "kind": s.directivity.kind,
                    "orientation": [
                        s.directivity.orientation.x,
                        s.directivity.orientation.y,
                        s.directivity.orientation.z,
                    ],
                },
            }
            for s in scene.sources
        ],
        "receivers": [
            {
                "id": r.id,
                "position": [r.position.x, r.position.y, r.position.z],
                "radius": r.radius,
            }
            for r in scene.receivers
        ],
    }
    return out


def scene_from_dict(data: dict) -> RoomScene:
    try:
        return _scene_from_dict(data)
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene data: {exc}") from exc


def _scene_from_dict(data: dict) -> RoomScene:
    materials = {}
    for name, m in data["materials"].items():
        imp = m.get("impedance")
        materials[name] = Material(
            name=name,
            absorption=tuple(m["absorption"]),
            scattering=tuple(m.get("scattering", (0.0,) * N_BANDS)),
            impedance=(
                tuple(complex(re, im) for re, im in imp) if imp else None
            ),
        )
    boxes = tuple(
        Box(Vec3.of(b["min"]), Vec3.of(b["max"]), b["material"])
        for b in data.get("boxes", ())
    )
    sources = tuple(
        Source(
            id=s["id"],
            position=Vec3.of(s["position"]),
            directivity=Directivity(
                kind=s.get("directivity", {}).get("kind", "omni"),
                orientation=Vec3.of(
                    s.get("directivity", {}).get("orientation", (1, 0, 0))
                ),
            ),
        )
        for s in data.get("sources", ())
    )
    receivers = tuple(
        Receiver(
            id=r["id"],
            position=Vec3.of(r["position"]),
            radius=float(r.get("radius", 0.25)),
        )
        for r in data.get("receivers", ())
    )
    scene = RoomScene(
        room_id=data["room_id"],
        dims=Vec3.of(data["dims"]),
        materials=materials,
        wall_materials=tuple(data["wall_materials"]),
        sources=sources,
        receivers=receivers,
        boxes=boxes,
        speed_of_sound=float(data.get("speed_of_sound", SPEED_OF_SOUND)),
    )
    validate_scene(scene)
    return scene


def load_scene(path) -> RoomScene:
    with open(path) as f:
        return scene_from_dict(json.load(f))


def save_scene(scene: RoomScene, path) -> None:
    validate_scene(scene)
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene), f, indent=2, sort_keys=True)
        f.write("\n")
