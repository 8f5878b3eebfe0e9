"""Dataset manifest: the index tying RIR files to scene coordinates.

A manifest row identifies one simulated or measured RIR by the key
(engine, room_id, condition_id, source_id, receiver_id) and records the
geometry needed by downstream consumers (true source-receiver distance
for distance-estimation scoring).  Entries keep file order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .geometry import Vec3

DISTANCE_TOLERANCE = 1e-6


class ManifestError(ValueError):
    """Manifest is malformed or internally inconsistent."""


@dataclass(frozen=True)
class ManifestEntry:
    rir_path: str
    engine: str
    room_id: str
    condition_id: str
    source_id: str
    receiver_id: str
    source_pos: Vec3
    receiver_pos: Vec3
    true_distance: float

    @property
    def key(self) -> tuple:
        return (
            self.engine,
            self.room_id,
            self.condition_id,
            self.source_id,
            self.receiver_id,
        )

    def validate(self) -> None:
        d = self.source_pos.distance_to(self.receiver_pos)
        if abs(d - self.true_distance) > DISTANCE_TOLERANCE:
            raise ManifestError(
                f"entry {self.key}: true_distance {self.true_distance} "
                f"disagrees with positions (computed {d})"
            )
        if not math.isfinite(self.true_distance) or self.true_distance <= 0:
            raise ManifestError(f"entry {self.key}: bad distance")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            e.validate()
            if e.key in seen:
                raise ManifestError(f"duplicate manifest key {e.key}")
            seen.add(e.key)

    def __len__(self) -> int:
        return len(self.entries)

    def by_key(self, key: tuple) -> ManifestEntry:
        for e in self.entries:
            if e.key == key:
                return e
        raise KeyError(f"no manifest entry {key}")

    def engines(self) -> list:
        out = []
        for e in self.entries:
            if e.engine not in out:
                out.append(e.engine)
        return out

    def filter(self, **fields) -> "DatasetManifest":
        """Sub-manifest keeping entries whose fields match all kwargs."""
        kept = [
            e
            for e in self.entries
            if all(getattr(e, k) == v for k, v in fields.items())
        ]
        return DatasetManifest(entries=tuple(kept))


def entry_from_dict(data: dict) -> ManifestEntry:
    required = (
        "rir_path", "engine", "room_id", "condition_id",
        "source_id", "receiver_id", "source_pos", "receiver_pos",
        "true_distance",
    )
    missing = [k for k in required if k not in data]
    if missing:
        raise ManifestError(f"manifest entry missing fields {missing}")
    return ManifestEntry(
        rir_path=str(data["rir_path"]),
        engine=str(data["engine"]),
        room_id=str(data["room_id"]),
        condition_id=str(data["condition_id"]),
        source_id=str(data["source_id"]),
        receiver_id=str(data["receiver_id"]),
        source_pos=Vec3.of(data["source_pos"]),
        receiver_pos=Vec3.of(data["receiver_pos"]),
        true_distance=float(data["true_distance"]),
    )


def entry_to_dict(e: ManifestEntry) -> dict:
    return {
        "rir_path": e.rir_path,
        "engine": e.engine,
        "room_id": e.room_id,
        "condition_id": e.condition_id,
        "source_id": e.source_id,
        "receiver_id": e.receiver_id,
        "source_pos": [e.source_pos.x, e.source_pos.y, e.source_pos.z],
        "receiver_pos": [
            e.receiver_pos.x, e.receiver_pos.y, e.receiver_pos.z,
        ],
        "true_distance": e.true_distance,
    }


def load_manifest(path) -> DatasetManifest:
    with open(path) as f:
        data = json.load(f)
    if "entries" not in data:
        raise ManifestError("manifest JSON needs an 'entries' list")
    return DatasetManifest(
        entries=tuple(entry_from_dict(e) for e in data["entries"])
    )


def save_manifest(manifest: DatasetManifest, path) -> None:
    data = {"entries": [entry_to_dict(e) for e in manifest.entries]}
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
