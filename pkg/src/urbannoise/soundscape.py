"""Seeded ground-truth soundscape scenarios.

A :class:`ScenarioSpec` describes sensors, a diurnal ambient profile and a set
of Poisson event generators. :func:`generate_timeline` turns it into a sorted
list of :class:`EmittedEvent`; :func:`sensor_levels` renders the level a
sensor would report at every frame instant.

Random streams are keyed by purpose and index through ``SeedSequence`` spawn
keys, so adding a generator or sensor never shifts another stream.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    LEVEL_MAX,
    LEVEL_MIN,
    Complaint,
    ComplaintCategory,
    GeoPoint,
    Resolution,
    Route,
    SourceClass,
    check_unique,
    clamp_level,
    db_to_mdb,
    db_to_mdb_array,
    distance,
)

DAY = 86_400

# local-time window during which construction noise counts as after-hours
AFTER_HOURS = (18 * 3600, 7 * 3600)

# spawn-key namespaces for independent random streams
_STREAM_GENERATOR = 0
_STREAM_NOISE = 1
_STREAM_SNIPPET = 2
_STREAM_COMPLAINT = 3


class SpecError(ValueError):
    """Invalid scenario or config document; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SensorSpec:
    id: str
    location: GeoPoint
    calibration_offset: int = 0
    frame_period: int = 1
    noise_sigma: float = 0.5

    def __post_init__(self):
        if not self.id:
            raise ValueError("sensor id must be non-empty")
        if self.frame_period < 1:
            raise ValueError("frame_period must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class DiurnalProfile:
    """Hourly ambient base levels (mdB) indexed by local hour of day."""

    hourly: tuple[int, ...]

    def __post_init__(self):
        if len(self.hourly) != 24:
            raise ValueError("diurnal profile needs 24 hourly levels")
        for lv in self.hourly:
            if not LEVEL_MIN <= lv <= LEVEL_MAX:
                raise ValueError(f"hourly level {lv} mdB outside [32, 120] dBA")

    @classmethod
    def constant(cls, db: float) -> DiurnalProfile:
        return cls(tuple([db_to_mdb(db)] * 24))

    def at(self, t: int, tz_offset: int = 0) -> int:
        return self.hourly[((t + tz_offset) % DAY) // 3600]

    def levels(self, ts: np.ndarray, tz_offset: int = 0) -> np.ndarray:
        hours = ((ts + tz_offset) % DAY) // 3600
        return np.asarray(self.hourly, dtype=np.int64)[hours]


@dataclass(frozen=True)
class EventGenerator:
    source: SourceClass
    rate: float
    duration: tuple[float, float]
    emission: tuple[float, float]
    region: tuple[float, float, float, float] | None = None
    sites: tuple[GeoPoint, ...] = ()
    # local seconds-of-day [start, end); wraps past midnight when start > end
    active_window: tuple[int, int] | None = None

    def validate(self, path: str = "generator") -> None:
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise SpecError(f"{path}.rate_per_hour", "must be finite and >= 0")
        lo, hi = self.duration
        if not (0 < lo <= hi):
            raise SpecError(f"{path}.duration_s", "need 0 < min <= max")
        lo, hi = self.emission
        if not lo <= hi:
            raise SpecError(f"{path}.emission_db", "need min <= max")
        if self.region is None and not self.sites:
            raise SpecError(path, "needs either region or sites")
        if self.region is not None:
            x0, y0, x1, y1 = self.region
            if x0 > x1 or y0 > y1:
                raise SpecError(f"{path}.region", "need x0 <= x1 and y0 <= y1")

    def in_window(self, t: np.ndarray, tz_offset: int) -> np.ndarray:
        if self.active_window is None:
            return np.ones(len(t), dtype=bool)
        return in_daily_window(t, tz_offset, *self.active_window)


def in_daily_window(t, tz_offset: int, start: int, end: int):
    """Membership of ``t`` in the half-open local window [start, end) seconds-of-day."""
    sod = (np.asarray(t) + tz_offset) % DAY
    if start <= end:
        return (sod >= start) & (sod < end)
    return (sod >= start) | (sod < end)


@dataclass(frozen=True)
class EmittedEvent:
    source: SourceClass
    start: int
    end: int
    emission_1m: int
    location: GeoPoint

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("event needs start < end")

    def active(self, t: int) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class ComplaintModel:
    """Synthetic 311 log: complaints triggered by construction events plus background noise."""

    per_construction_event: float = 0.0
    delay: tuple[int, int] = (60, 3600)
    offset: tuple[float, float] = (0.0, 50.0)
    background_per_day: dict = field(default_factory=dict)
    dep_fraction: float = 1.0
    resolution: dict = field(
        default_factory=lambda: {
            Resolution.VIOLATION_NOT_OBSERVED: 0.78,
            Resolution.VIOLATION_ISSUED: 0.02,
            Resolution.OTHER: 0.20,
        }
    )
    region: tuple[float, float, float, float] | None = None


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    duration: int
    origin_epoch: int
    sensors: tuple[SensorSpec, ...]
    ambient: DiurnalProfile
    generators: tuple[EventGenerator, ...] = ()
    planted: tuple[EmittedEvent, ...] = ()
    complaint_model: ComplaintModel | None = None
    tz_offset: int = 0
    snippet_rate: float = 2.0  # per hour of simulated time

    def __post_init__(self):
        if self.duration <= 0:
            raise SpecError("duration", "must be > 0")
        if self.origin_epoch < 0:
            raise SpecError("origin_epoch", "must be >= 0")
        if not self.sensors:
            raise SpecError("sensors", "at least one sensor required")
        try:
            check_unique([s.id for s in self.sensors], "sensor id")
        except ValueError as e:
            raise SpecError("sensors", str(e)) from None
        for i, g in enumerate(self.generators):
            g.validate(f"generators[{i}]")
        if self.snippet_rate < 0:
            raise SpecError("snippet_rate_per_hour", "must be >= 0")

    @property
    def end_epoch(self) -> int:
        return self.origin_epoch + self.duration

    def sensor(self, sensor_id: str) -> SensorSpec:
        for s in self.sensors:
            if s.id == sensor_id:
                return s
        raise KeyError(sensor_id)

    def sensor_index(self, sensor_id: str) -> int:
        for i, s in enumerate(self.sensors):
            if s.id == sensor_id:
                return i
        raise KeyError(sensor_id)


# --------------------------------------------------------------------------
# acoustics


def propagate(emission_1m: int, d: float) -> int:
    """Free-field point-source level at ``d`` meters (1 m reference, no gain below 1 m)."""
    if d < 0:
        raise ValueError("distance must be >= 0")
    return emission_1m - db_to_mdb(20.0 * math.log10(max(d, 1.0)))


def energetic_sum(levels) -> int:
    levels = list(levels)
    if not levels:
        raise ValueError("energetic_sum of an empty list")
    power = 0.0
    for lv in levels:
        power += 10.0 ** (lv / 10_000)
    return db_to_mdb(10.0 * math.log10(power))


def received_level(
    sensor: SensorSpec,
    t: int,
    timeline,
    ambient: DiurnalProfile,
    rng: np.random.Generator | None = None,
    tz_offset: int = 0,
) -> int:
    """Reported level at one instant: ambient plus active events, noise, calibration, clamp."""
    contributions = [ambient.at(t, tz_offset)]
    for ev in timeline:
        if ev.active(t):
            contributions.append(propagate(ev.emission_1m, distance(ev.location, sensor.location)))
    level = energetic_sum(contributions)
    if rng is not None and sensor.noise_sigma > 0:
        level += db_to_mdb(rng.normal(0.0, sensor.noise_sigma))
    return clamp_level(level + sensor.calibration_offset)


def dominant_source(t: int, sensor: SensorSpec, timeline) -> SourceClass:
    best = None
    best_level = None
    for ev in timeline:
        if ev.active(t):
            lv = propagate(ev.emission_1m, distance(ev.location, sensor.location))
            if best_level is None or lv > best_level:
                best, best_level = ev.source, lv
    return best if best is not None else SourceClass.AMBIENT


def dominant_source_over(sensor: SensorSpec, t0: int, t1: int, timeline) -> SourceClass:
    """Class contributing the most acoustic energy at ``sensor`` during [t0, t1).

    Energy is received power times overlap seconds, summed per class. Ambient
    is returned only when no event overlaps the interval.
    """
    energy: dict[SourceClass, float] = {}
    for ev in timeline:
        overlap = min(ev.end, t1) - max(ev.start, t0)
        if overlap <= 0:
            continue
        lv = propagate(ev.emission_1m, distance(ev.location, sensor.location))
        energy[ev.source] = energy.get(ev.source, 0.0) + overlap * 10.0 ** (lv / 10_000)
    if not energy:
        return SourceClass.AMBIENT
    return max(energy, key=lambda c: energy[c])


# --------------------------------------------------------------------------
# timeline


def generate_timeline(spec: ScenarioSpec) -> list[EmittedEvent]:
    events = list(spec.planted)
    for gi, gen in enumerate(spec.generators):
        events.extend(_sample_generator(spec, gi, gen))
    events.sort(key=lambda e: (e.start, e.end, e.source.value, e.location.x, e.location.y, e.emission_1m))
    return events


def _sample_generator(spec: ScenarioSpec, index: int, gen: EventGenerator) -> list[EmittedEvent]:
    rng = stream(spec.seed, _STREAM_GENERATOR, index)
    n = int(rng.poisson(gen.rate * spec.duration / 3600.0))
    if n == 0:
        return []
    offsets = np.sort(rng.integers(0, spec.duration, size=n))
    lo, hi = gen.duration
    durations = np.exp(rng.uniform(math.log(lo), math.log(hi), size=n))
    durations = np.maximum(np.rint(durations), 1).astype(np.int64)
    emissions = db_to_mdb_array(rng.uniform(gen.emission[0], gen.emission[1], size=n))
    if gen.sites:
        picks = rng.integers(0, len(gen.sites), size=n)
        locations = [gen.sites[i] for i in picks]
    else:
        x0, y0, x1, y1 = gen.region
        xs = rng.uniform(x0, x1, size=n)
        ys = rng.uniform(y0, y1, size=n)
        locations = [GeoPoint(float(x), float(y)) for x, y in zip(xs, ys)]
    starts = spec.origin_epoch + offsets
    keep = gen.in_window(starts, spec.tz_offset)
    return [
        EmittedEvent(gen.source, int(s), int(s + d), int(e), loc)
        for s, d, e, loc, k in zip(starts, durations, emissions, locations, keep)
        if k
    ]


def sensor_levels(
    spec: ScenarioSpec, sensor_index: int, timeline, t0: int | None = None, t1: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Frame instants and reported levels (mdB) for one sensor over [t0, t1).

    Noise is drawn per (sensor, scenario day) so any sub-range renders the
    same values as a full run.
    """
    sensor = spec.sensors[sensor_index]
    t0 = spec.origin_epoch if t0 is None else max(t0, spec.origin_epoch)
    t1 = spec.end_epoch if t1 is None else min(t1, spec.end_epoch)
    ts_parts, lv_parts = [], []
    first_day = (t0 - spec.origin_epoch) // DAY
    last_day = (t1 - 1 - spec.origin_epoch) // DAY if t1 > t0 else first_day - 1
    for day in range(first_day, last_day + 1):
        d0 = spec.origin_epoch + day * DAY
        ts, lv = _render_day(spec, sensor_index, sensor, timeline, d0)
        sel = (ts >= t0) & (ts < t1)
        ts_parts.append(ts[sel])
        lv_parts.append(lv[sel])
    if not ts_parts:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(ts_parts), np.concatenate(lv_parts)


def _render_day(spec, sensor_index, sensor, timeline, d0):
    d1 = min(d0 + DAY, spec.end_epoch)
    period = sensor.frame_period
    # frame grid anchored at the scenario origin
    first = d0 + (-(d0 - spec.origin_epoch)) % period
    ts = np.arange(first, d1, period, dtype=np.int64)
    power = np.power(10.0, spec.ambient.levels(ts, spec.tz_offset) / 10_000)
    for ev in timeline:
        if ev.end <= first or ev.start >= d1:
            continue
        lo = np.searchsorted(ts, ev.start)
        hi = np.searchsorted(ts, ev.end)
        if lo == hi:
            continue
        lv = propagate(ev.emission_1m, distance(ev.location, sensor.location))
        power[lo:hi] += 10.0 ** (lv / 10_000)
    level = db_to_mdb_array(10.0 * np.log10(power))
    if sensor.noise_sigma > 0:
        rng = stream(spec.seed, _STREAM_NOISE, sensor_index, (d0 - spec.origin_epoch) // DAY)
        level += db_to_mdb_array(rng.normal(0.0, sensor.noise_sigma, size=len(ts)))
    level += sensor.calibration_offset
    np.clip(level, LEVEL_MIN, LEVEL_MAX, out=level)
    return ts, level


# --------------------------------------------------------------------------
# synthetic complaints


def generate_complaints(spec: ScenarioSpec, timeline) -> list[Complaint]:
    model = spec.complaint_model
    if model is None:
        return []
    rng = stream(spec.seed, _STREAM_COMPLAINT)
    drafts = []
    for ev in timeline:
        if not ev.source.construction:
            continue
        if rng.random() >= model.per_construction_event:
            continue
        delay = int(rng.integers(model.delay[0], model.delay[1] + 1))
        created = ev.start + delay
        r = rng.uniform(*model.offset)
        theta = rng.uniform(0.0, 2 * math.pi)
        loc = GeoPoint(ev.location.x + r * math.cos(theta), ev.location.y + r * math.sin(theta))
        category = (
            ComplaintCategory.AFTER_HOURS_CONSTRUCTION
            if in_daily_window(ev.start, spec.tz_offset, *AFTER_HOURS)
            else ComplaintCategory.CONSTRUCTION
        )
        drafts.append((created, category, loc))
    for category, per_day in sorted(model.background_per_day.items(), key=lambda kv: kv[0].value):
        n = int(rng.poisson(per_day * spec.duration / DAY))
        for _ in range(n):
            created = spec.origin_epoch + int(rng.integers(0, spec.duration))
            region = model.region or _sensor_bbox(spec, pad=100.0)
            loc = GeoPoint(float(rng.uniform(region[0], region[2])), float(rng.uniform(region[1], region[3])))
            drafts.append((created, category, loc))
    drafts.sort(key=lambda d: (d[0], d[1].value, d[2].x, d[2].y))
    resolutions = sorted(model.resolution.items(), key=lambda kv: kv[0].value)
    probs = np.array([p for _, p in resolutions], dtype=float)
    probs = probs / probs.sum()
    out = []
    for i, (created, category, loc) in enumerate(drafts):
        route = Route.DEP if rng.random() < model.dep_fraction else Route.OTHER
        resolution = resolutions[int(rng.choice(len(resolutions), p=probs))][0]
        out.append(Complaint(f"c{i:05d}", category, int(created), loc, route, resolution))
    return out


def _sensor_bbox(spec: ScenarioSpec, pad: float):
    xs = [s.location.x for s in spec.sensors]
    ys = [s.location.y for s in spec.sensors]
    return (min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad)


# --------------------------------------------------------------------------
# serialization

TRUTH_COLUMNS = ("class", "start", "end", "emission_mdb", "x", "y")


def _hhmm(path: str, s: str) -> int:
    try:
        hh, mm = s.split(":")
        sec = int(hh) * 3600 + int(mm) * 60
    except (ValueError, AttributeError):
        raise SpecError(path, f"expected HH:MM, got {s!r}") from None
    if not 0 <= sec <= DAY:
        raise SpecError(path, f"time of day out of range: {s!r}")
    return sec % DAY


def _fmt_hhmm(sec: int) -> str:
    return f"{sec // 3600:02d}:{sec % 3600 // 60:02d}"


_TOP_KEYS = {
    "seed", "duration", "origin_epoch", "tz_offset", "sensors", "ambient",
    "generators", "planted", "complaint_model", "snippet_rate_per_hour",
}
_SENSOR_KEYS = {"id", "x", "y", "calibration_offset_db", "frame_period", "noise_sigma"}
_GEN_KEYS = {"class", "rate_per_hour", "duration_s", "emission_db", "region", "sites", "active_window"}
_EVENT_KEYS = {"class", "start", "end", "emission_db", "x", "y"}
_COMPLAINT_KEYS = {
    "per_construction_event", "delay_s", "offset_m", "background_per_day",
    "dep_fraction", "resolution", "region",
}


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise SpecError(path, "expected an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise SpecError(f"{path}.{extra[0]}" if path else extra[0], "unknown key")


def _get(obj, key, path, kind=None, default=...):
    if key not in obj:
        if default is ...:
            raise SpecError(f"{path}.{key}" if path else key, "required")
        return default
    val = obj[key]
    if kind is not None:
        try:
            if kind is int and (isinstance(val, bool) or float(val) != int(val)):
                raise ValueError
            val = kind(val)
        except (TypeError, ValueError):
            raise SpecError(f"{path}.{key}" if path else key, f"expected {kind.__name__}") from None
    return val


def _pair(obj, key, path, default=...):
    val = _get(obj, key, path, default=default)
    p = f"{path}.{key}"
    if not (isinstance(val, (list, tuple)) and len(val) == 2):
        raise SpecError(p, "expected [min, max]")
    try:
        lo, hi = float(val[0]), float(val[1])
    except (TypeError, ValueError):
        raise SpecError(p, "expected numbers") from None
    if lo > hi:
        raise SpecError(p, "min > max")
    return lo, hi


def _enum(kind, raw, path):
    try:
        return kind(raw)
    except ValueError:
        raise SpecError(path, f"unknown value {raw!r}") from None


def spec_from_dict(doc: dict) -> ScenarioSpec:
    _check_keys(doc, _TOP_KEYS, "")
    sensors = []
    raw_sensors = _get(doc, "sensors", "")
    if not isinstance(raw_sensors, list):
        raise SpecError("sensors", "expected a list")
    for i, s in enumerate(raw_sensors):
        p = f"sensors[{i}]"
        _check_keys(s, _SENSOR_KEYS, p)
        try:
            sensors.append(
                SensorSpec(
                    id=str(_get(s, "id", p)),
                    location=GeoPoint(_get(s, "x", p, float), _get(s, "y", p, float)),
                    calibration_offset=db_to_mdb(_get(s, "calibration_offset_db", p, float, 0.0)),
                    frame_period=_get(s, "frame_period", p, int, 1),
                    noise_sigma=_get(s, "noise_sigma", p, float, 0.5),
                )
            )
        except SpecError:
            raise
        except ValueError as e:
            raise SpecError(p, str(e)) from None

    amb = _get(doc, "ambient", "")
    _check_keys(amb, {"hourly_db", "constant_db"}, "ambient")
    try:
        if "hourly_db" in amb:
            hourly = amb["hourly_db"]
            if not isinstance(hourly, list) or len(hourly) != 24:
                raise SpecError("ambient.hourly_db", "expected 24 numbers")
            ambient = DiurnalProfile(tuple(db_to_mdb(float(v)) for v in hourly))
        else:
            ambient = DiurnalProfile.constant(_get(amb, "constant_db", "ambient", float))
    except SpecError:
        raise
    except (TypeError, ValueError) as e:
        raise SpecError("ambient", str(e)) from None

    generators = []
    for i, g in enumerate(_get(doc, "generators", "", default=[])):
        p = f"generators[{i}]"
        _check_keys(g, _GEN_KEYS, p)
        region = g.get("region")
        if region is not None:
            if not (isinstance(region, list) and len(region) == 4):
                raise SpecError(f"{p}.region", "expected [x0, y0, x1, y1]")
            region = tuple(float(v) for v in region)
        sites = tuple(GeoPoint(float(a), float(b)) for a, b in g.get("sites", []))
        window = g.get("active_window")
        if window is not None:
            if not (isinstance(window, list) and len(window) == 2):
                raise SpecError(f"{p}.active_window", "expected [\"HH:MM\", \"HH:MM\"]")
            window = (_hhmm(f"{p}.active_window", window[0]), _hhmm(f"{p}.active_window", window[1]))
        gen = EventGenerator(
            source=_enum(SourceClass, _get(g, "class", p), f"{p}.class"),
            rate=_get(g, "rate_per_hour", p, float),
            duration=_pair(g, "duration_s", p),
            emission=_pair(g, "emission_db", p),
            region=region,
            sites=sites,
            active_window=window,
        )
        gen.validate(p)
        generators.append(gen)

    planted = []
    for i, e in enumerate(_get(doc, "planted", "", default=[])):
        p = f"planted[{i}]"
        _check_keys(e, _EVENT_KEYS, p)
        start, end = _get(e, "start", p, int), _get(e, "end", p, int)
        if not start < end:
            raise SpecError(p, "need start < end")
        planted.append(
            EmittedEvent(
                _enum(SourceClass, _get(e, "class", p), f"{p}.class"),
                start,
                end,
                db_to_mdb(_get(e, "emission_db", p, float)),
                GeoPoint(_get(e, "x", p, float), _get(e, "y", p, float)),
            )
        )

    cm = None
    if doc.get("complaint_model") is not None:
        c = doc["complaint_model"]
        p = "complaint_model"
        _check_keys(c, _COMPLAINT_KEYS, p)
        delay = _pair(c, "delay_s", p, default=[60, 3600])
        bg = {}
        for k, v in c.get("background_per_day", {}).items():
            bg[_enum(ComplaintCategory, k, f"{p}.background_per_day.{k}")] = float(v)
        res = ComplaintModel().resolution
        if "resolution" in c:
            res = {_enum(Resolution, k, f"{p}.resolution.{k}"): float(v) for k, v in c["resolution"].items()}
            if not res or sum(res.values()) <= 0:
                raise SpecError(f"{p}.resolution", "needs positive weights")
        region = c.get("region")
        cm = ComplaintModel(
            per_construction_event=_get(c, "per_construction_event", p, float, 0.0),
            delay=(int(delay[0]), int(delay[1])),
            offset=_pair(c, "offset_m", p, default=[0.0, 50.0]),
            background_per_day=bg,
            dep_fraction=_get(c, "dep_fraction", p, float, 1.0),
            resolution=res,
            region=tuple(float(v) for v in region) if region is not None else None,
        )

    return ScenarioSpec(
        seed=_get(doc, "seed", "", int),
        duration=_get(doc, "duration", "", int),
        origin_epoch=_get(doc, "origin_epoch", "", int),
        sensors=tuple(sensors),
        ambient=ambient,
        generators=tuple(generators),
        planted=tuple(planted),
        complaint_model=cm,
        tz_offset=_get(doc, "tz_offset", "", int, 0),
        snippet_rate=_get(doc, "snippet_rate_per_hour", "", float, 2.0),
    )


def spec_to_dict(spec: ScenarioSpec) -> dict:
    doc = {
        "seed": spec.seed,
        "duration": spec.duration,
        "origin_epoch": spec.origin_epoch,
        "tz_offset": spec.tz_offset,
        "snippet_rate_per_hour": spec.snippet_rate,
        "sensors": [
            {
                "id": s.id,
                "x": s.location.x,
                "y": s.location.y,
                "calibration_offset_db": s.calibration_offset / 1000,
                "frame_period": s.frame_period,
                "noise_sigma": s.noise_sigma,
            }
            for s in spec.sensors
        ],
        "ambient": {"hourly_db": [v / 1000 for v in spec.ambient.hourly]},
        "generators": [],
        "planted": [
            {"class": e.source.value, "start": e.start, "end": e.end,
             "emission_db": e.emission_1m / 1000, "x": e.location.x, "y": e.location.y}
            for e in spec.planted
        ],
    }
    for g in spec.generators:
        gd = {
            "class": g.source.value,
            "rate_per_hour": g.rate,
            "duration_s": list(g.duration),
            "emission_db": list(g.emission),
        }
        if g.region is not None:
            gd["region"] = list(g.region)
        if g.sites:
            gd["sites"] = [[p.x, p.y] for p in g.sites]
        if g.active_window is not None:
            gd["active_window"] = [_fmt_hhmm(g.active_window[0]), _fmt_hhmm(g.active_window[1])]
        doc["generators"].append(gd)
    cm = spec.complaint_model
    if cm is not None:
        doc["complaint_model"] = {
            "per_construction_event": cm.per_construction_event,
            "delay_s": list(cm.delay),
            "offset_m": list(cm.offset),
            "background_per_day": {k.value: v for k, v in cm.background_per_day.items()},
            "dep_fraction": cm.dep_fraction,
            "resolution": {k.value: v for k, v in cm.resolution.items()},
        }
        if cm.region is not None:
            doc["complaint_model"]["region"] = list(cm.region)
    return doc


def load_spec(path) -> ScenarioSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SpecError("<document>", f"invalid JSON: {e}") from None
    return spec_from_dict(doc)


def demo_spec_path() -> Path:
    return Path(__file__).parent / "data" / "demo_scenario.json"


def demo_spec() -> ScenarioSpec:
    return load_spec(demo_spec_path())


def timeline_to_csv(timeline) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRUTH_COLUMNS)
    for e in timeline:
        w.writerow([e.source.value, e.start, e.end, e.emission_1m, repr(e.location.x), repr(e.location.y)])
    return buf.getvalue()


def timeline_from_csv(text: str) -> list[EmittedEvent]:
    rows = csv.DictReader(io.StringIO(text))
    if tuple(rows.fieldnames or ()) != TRUTH_COLUMNS:
        raise ValueError(f"truth CSV header must be {','.join(TRUTH_COLUMNS)}")
    return [
        EmittedEvent(
            SourceClass(r["class"]), int(r["start"]), int(r["end"]), int(r["emission_mdb"]),
            GeoPoint(float(r["x"]), float(r["y"])),
        )
        for r in rows
    ]
