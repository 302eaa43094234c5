"""Shared domain vocabulary: fixed-point levels, time, planar geometry, enums.

Levels are stored as integer millidecibels (mdB) so every aggregate the
lattice keeps is an exact integer. Times are integer UTC epoch seconds.
Locations are planar meters relative to a scenario origin.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

MDB_PER_DB = 1000
DAY = 86_400
LEVEL_MIN = 32_000
LEVEL_MAX = 120_000


def db_to_mdb(d: float) -> int:
    """Convert decibels to integer millidecibels, rounding half away from zero."""
    if not math.isfinite(d):
        raise ValueError(f"level must be finite, got {d!r}")
    scaled = abs(d) * MDB_PER_DB
    value = int(math.floor(scaled + 0.5))
    return -value if d < 0 else value


def mdb_to_db(x: int) -> float:
    return x / MDB_PER_DB


def db_to_mdb_array(d: np.ndarray) -> np.ndarray:
    """Vectorized :func:`db_to_mdb`; same rounding rule, int64 output."""
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("levels must be finite")
    out = np.floor(np.abs(d) * MDB_PER_DB + 0.5)
    return (np.sign(d) * out).astype(np.int64)


def clamp_level(x: int) -> int:
    return min(max(x, LEVEL_MIN), LEVEL_MAX)


def round_div(num: int, den: int) -> int:
    """Exact integer ``num / den`` rounded half away from zero (den > 0)."""
    if den <= 0:
        raise ValueError("denominator must be positive")
    q, r = divmod(abs(num), den)
    if 2 * r >= den:
        q += 1
    return -q if num < 0 else q


@dataclass(frozen=True)
class GeoPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")


def distance(a: GeoPoint, b: GeoPoint) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


class SourceClass(str, enum.Enum):
    JACKHAMMER = "Jackhammer"
    COMPRESSOR_ENGINE = "CompressorEngine"
    METALLIC_BANGING = "MetallicBanging"
    SIREN = "Siren"
    TRAFFIC = "Traffic"
    MUSIC = "Music"
    CROWD = "Crowd"
    AMBIENT = "Ambient"
    # detection run without simulation ground truth
    UNKNOWN = "Unknown"

    @property
    def construction(self) -> bool:
        return self in _CONSTRUCTION

    def __str__(self) -> str:
        return self.value


_CONSTRUCTION = frozenset(
    {SourceClass.JACKHAMMER, SourceClass.COMPRESSOR_ENGINE, SourceClass.METALLIC_BANGING}
)


class ComplaintCategory(str, enum.Enum):
    AFTER_HOURS_CONSTRUCTION = "AfterHoursConstruction"
    CONSTRUCTION = "Construction"
    JACKHAMMER = "Jackhammer"
    ALARM_SIGNAL = "AlarmSignal"
    TRAFFIC = "Traffic"
    OTHER = "Other"

    def __str__(self) -> str:
        return self.value


class Route(str, enum.Enum):
    DEP = "DEP"
    OTHER = "Other"

    def __str__(self) -> str:
        return self.value


class Resolution(str, enum.Enum):
    VIOLATION_NOT_OBSERVED = "ViolationNotObserved"
    VIOLATION_ISSUED = "ViolationIssued"
    OTHER = "Other"

    def __str__(self) -> str:
        return self.value


def parse_enum(kind: type[enum.Enum], raw: str):
    """Map ``raw`` onto a closed enumeration; unknown values fall into ``Other``."""
    try:
        return kind(raw)
    except ValueError:
        logger.warning("unknown %s value %r mapped to Other", kind.__name__, raw)
        return kind("Other")


@dataclass(frozen=True)
class SplFrame:
    sensor: str
    t: int
    level: int

    def __post_init__(self):
        if not LEVEL_MIN <= self.level <= LEVEL_MAX:
            raise ValueError(f"level {self.level} mdB outside [{LEVEL_MIN}, {LEVEL_MAX}]")
        if self.t < 0:
            raise ValueError("timestamp must be non-negative")


@dataclass(frozen=True)
class Complaint:
    id: str
    category: ComplaintCategory
    created_at: int
    location: GeoPoint
    route: Route = Route.DEP
    resolution: Resolution = Resolution.OTHER

    @classmethod
    def from_strings(cls, id, category, created_at, x, y, route, resolution) -> Complaint:
        if not id:
            raise ValueError("complaint id must be non-empty")
        return cls(
            id=id,
            category=parse_enum(ComplaintCategory, category),
            created_at=int(created_at),
            location=GeoPoint(float(x), float(y)),
            route=parse_enum(Route, route),
            resolution=parse_enum(Resolution, resolution),
        )


def check_unique(ids, what: str = "id") -> None:
    seen = set()
    for i in ids:
        if not i:
            raise ValueError(f"empty {what}")
        if i in seen:
            raise ValueError(f"duplicate {what} {i!r}")
        seen.add(i)
