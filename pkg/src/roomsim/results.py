"""Evaluation-result records and the CSV results store.

One EvalResult row holds one metric value for one (engine, room,
condition, source, receiver, algorithm) cell.  A perfect SI-SDR score is
stored as the +infinity sentinel (written as ``inf`` in CSV) rather than
a fabricated finite cap; aggregation layers exclude sentinel rows and
report the exclusion count.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

RESULTS_HEADER = (
    "engine",
    "room_id",
    "condition_id",
    "source_id",
    "receiver_id",
    "algorithm",
    "metric",
    "value",
)


@dataclass(frozen=True)
class EvalResult:
    engine: str
    room_id: str
    condition_id: str
    source_id: str
    receiver_id: str
    algorithm: str
    metric: str
    value: float  # math.inf encodes the perfect-score sentinel

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        if math.isnan(self.value) or self.value == -math.inf:
            raise ValueError(
                f"result value must be finite or +inf, got {self.value}"
            )

    @property
    def key(self) -> tuple:
        """Full identity; unique within a result set."""
        return (
            self.engine,
            self.room_id,
            self.condition_id,
            self.source_id,
            self.receiver_id,
            self.algorithm,
            self.metric,
        )

    @property
    def pair_key(self) -> tuple:
        """Join key used when pairing result sets across engines."""
        return (
            self.room_id,
            self.condition_id,
            self.source_id,
            self.receiver_id,
        )

    @property
    def is_sentinel(self) -> bool:
        return math.isinf(self.value)


def check_unique(rows) -> None:
    seen = set()
    for r in rows:
        if r.key in seen:
            raise ValueError(f"duplicate result key {r.key}")
        seen.add(r.key)


def sort_results(rows) -> list:
    """Deterministic row order: sorted by the full key."""
    return sorted(rows, key=lambda r: r.key)


def format_value(v: float) -> str:
    # repr round-trips float64 exactly and spells the sentinel 'inf'
    return repr(float(v))


def save_results(rows, path) -> None:
    """Write rows to CSV in the given order (callers sort for stability)."""
    rows = list(rows)
    check_unique(rows)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in rows:
            w.writerow(
                [
                    r.engine,
                    r.room_id,
                    r.condition_id,
                    r.source_id,
                    r.receiver_id,
                    r.algorithm,
                    r.metric,
                    format_value(r.value),
                ]
            )


def load_results(path) -> list:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != RESULTS_HEADER:
            raise ValueError(
                f"results file {path} must start with header "
                f"{','.join(RESULTS_HEADER)}"
            )
        for i, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(RESULTS_HEADER):
                raise ValueError(f"{path} line {i}: expected 8 fields")
            try:
                value = float(rec[7])
            except ValueError as exc:
                raise ValueError(
                    f"{path} line {i}: bad value {rec[7]!r}"
                ) from exc
            rows.append(
                EvalResult(
                    engine=rec[0],
                    room_id=rec[1],
                    condition_id=rec[2],
                    source_id=rec[3],
                    receiver_id=rec[4],
                    algorithm=rec[5],
                    metric=rec[6],
                    value=value,
                )
            )
    check_unique(rows)
    return rows
