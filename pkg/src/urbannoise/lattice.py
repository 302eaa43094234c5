"""Multi-resolution time lattice for per-sensor SPL aggregates.

Every sensor keeps one dictionary per resolution level mapping an aligned
span start to an immutable ``(count, sum, min, max)`` tuple in integer mdB,
plus dense per-day arrays of raw frames. Inserts roll a batch up level by
level (minute -> 5 min -> hour -> day -> ISO week / calendar month), so a
series query touches one node per output span instead of every raw frame.

Queries whose range cuts through a span are answered exactly by descending
into the child level for the uncovered part only.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import hashlib
import io
import json
import threading
import time
from dataclasses import dataclass

import numpy as np

from .core import db_to_mdb, round_div

DAY = 86_400
MISSING = np.iinfo(np.int32).min
_EPOCH = dt.date(1970, 1, 1)


class LatticeLevel(enum.IntEnum):
    RAW = 0
    MINUTE = 1
    FIVE_MINUTE = 2
    HOUR = 3
    DAY = 4
    WEEK = 5
    MONTH = 6

    @classmethod
    def parse(cls, name: str) -> LatticeLevel:
        key = name.strip().upper().replace("-", "_")
        aliases = {"5MIN": "FIVE_MINUTE", "FIVEMINUTE": "FIVE_MINUTE", "5_MINUTE": "FIVE_MINUTE"}
        return cls[aliases.get(key, key)]


class Stat(str, enum.Enum):
    MEAN_DB = "MeanDb"
    ENERGETIC_MEAN_DB = "EnergeticMeanDb"
    MIN = "Min"
    MAX = "Max"
    COUNT = "Count"


_FIXED = {
    LatticeLevel.RAW: 1,
    LatticeLevel.MINUTE: 60,
    LatticeLevel.FIVE_MINUTE: 300,
    LatticeLevel.HOUR: 3600,
    LatticeLevel.DAY: DAY,
}

CHILD = {
    LatticeLevel.MINUTE: LatticeLevel.RAW,
    LatticeLevel.FIVE_MINUTE: LatticeLevel.MINUTE,
    LatticeLevel.HOUR: LatticeLevel.FIVE_MINUTE,
    LatticeLevel.DAY: LatticeLevel.HOUR,
    LatticeLevel.WEEK: LatticeLevel.DAY,
    LatticeLevel.MONTH: LatticeLevel.DAY,
}

AGG_LEVELS = (
    LatticeLevel.MINUTE,
    LatticeLevel.FIVE_MINUTE,
    LatticeLevel.HOUR,
    LatticeLevel.DAY,
    LatticeLevel.WEEK,
    LatticeLevel.MONTH,
)


def _month_start(day: int) -> int:
    d = _EPOCH + dt.timedelta(days=day)
    return (d.replace(day=1) - _EPOCH).days * DAY


def span_start(level: LatticeLevel, t: int) -> int:
    if level in _FIXED:
        w = _FIXED[level]
        return t - t % w
    day = t // DAY
    if level == LatticeLevel.WEEK:
        # 1970-01-01 was a Thursday; ISO weeks start on Monday
        return (day - (day + 3) % 7) * DAY
    return _month_start(day)


def span_end(level: LatticeLevel, start: int) -> int:
    if level in _FIXED:
        return start + _FIXED[level]
    if level == LatticeLevel.WEEK:
        return start + 7 * DAY
    d = _EPOCH + dt.timedelta(days=start // DAY)
    nxt = dt.date(d.year + d.month // 12, d.month % 12 + 1, 1)
    return (nxt - _EPOCH).days * DAY


def _span_keys(level: LatticeLevel, ts: np.ndarray) -> np.ndarray:
    if level in _FIXED:
        return ts - ts % _FIXED[level]
    days = ts // DAY
    if level == LatticeLevel.WEEK:
        return (days - (days + 3) % 7) * DAY
    months = days.astype("datetime64[D]").astype("datetime64[M]")
    return months.astype("datetime64[D]").astype(np.int64) * DAY


def decompose(start: int, end: int, level: LatticeLevel) -> list[tuple[int, int]]:
    """Aligned ``[s0, s1)`` spans at ``level`` that intersect ``[start, end)``, in order."""
    if end <= start:
        return []
    spans = []
    s = span_start(level, start)
    if level in _FIXED:
        w = _FIXED[level]
        return [(x, x + w) for x in range(s, end, w)]
    while s < end:
        e = span_end(level, s)
        spans.append((s, e))
        s = e
    return spans


@dataclass(frozen=True)
class LatticeNode:
    start: int
    end: int
    count: int
    sum: int | None
    min: int | None
    max: int | None


@dataclass(frozen=True)
class SeriesPoint:
    start: int
    value: int | None  # None marks a gap (no frames in the span)
    count: int

    @property
    def gap(self) -> bool:
        return self.count == 0


class DuplicateFrameError(ValueError):
    pass


def fold(aggs):
    """Combine ``(count, sum, min, max)`` tuples; empty input gives ``(0, 0, None, None)``."""
    count, total, lo, hi = 0, 0, None, None
    for c, s, mn, mx in aggs:
        if c == 0:
            continue
        count += c
        total += s
        lo = mn if lo is None else min(lo, mn)
        hi = mx if hi is None else max(hi, mx)
    return count, total, lo, hi


_EMPTY = (0, 0, None, None)


def _group(level, keys, cnt, tot, mn, mx):
    k = _span_keys(level, keys)
    starts = np.concatenate(([0], np.flatnonzero(k[1:] != k[:-1]) + 1))
    return (
        k[starts],
        np.add.reduceat(cnt, starts),
        np.add.reduceat(tot, starts),
        np.minimum.reduceat(mn, starts),
        np.maximum.reduceat(mx, starts),
    )


def _one_minute(ts, levels) -> bool:
    """True for short plain-int lists, strictly increasing, all inside one minute."""
    if type(ts) is not list or type(levels) is not list:
        return False
    n = len(ts)
    if n == 0 or n > 60 or len(levels) != n or ts[0] < 0 or ts[0] // 60 != ts[-1] // 60:
        return False
    if not all(type(v) is int for v in ts) or not all(type(v) is int for v in levels):
        return False
    return all(a < b for a, b in zip(ts, ts[1:]))


class _SensorData:
    __slots__ = ("raw", "nodes")

    def __init__(self):
        self.raw: dict[int, np.ndarray] = {}
        self.nodes: list[dict[int, tuple]] = [dict() for _ in LatticeLevel]


class LatticeStore:
    """In-memory lattice for many sensors.

    One writer at a time; readers never take a lock. Nodes are replaced, not
    mutated, and a version counter (odd while a write is in progress) lets a
    reader retry if a write overlapped its query.
    """

    def __init__(self, check_duplicates: bool = True):
        self._sensors: dict[str, _SensorData] = {}
        self.check_duplicates = check_duplicates
        self._version = 0
        self._write_lock = threading.Lock()
        self.node_reads = 0
        self.raw_reads = 0

    # -- writes -----------------------------------------------------------

    @property
    def sensors(self) -> list[str]:
        return sorted(self._sensors)

    def insert(self, sensor: str, frames) -> None:
        """Insert frames given as ``SplFrame`` objects or ``(t, level)`` pairs."""
        frames = list(frames)
        if not frames:
            return
        if hasattr(frames[0], "level"):
            for f in frames:
                if f.sensor != sensor:
                    raise ValueError(f"frame for sensor {f.sensor!r} inserted under {sensor!r}")
            ts = [f.t for f in frames]
            lv = [f.level for f in frames]
        else:
            ts = [f[0] for f in frames]
            lv = [f[1] for f in frames]
        self.insert_arrays(sensor, ts, lv)

    def insert_arrays(self, sensor: str, ts, levels) -> None:
        if _one_minute(ts, levels):
            with self._write_lock:
                self._version += 1
                try:
                    self._apply_minute(sensor, ts, levels)
                finally:
                    self._version += 1
            return
        ts = np.asarray(ts, dtype=np.int64)
        lv = np.asarray(levels, dtype=np.int64)
        if ts.shape != lv.shape or ts.ndim != 1:
            raise ValueError("timestamps and levels must be 1-D arrays of equal length")
        if len(ts) == 0:
            return
        if ts[0] < 0 or np.any(ts < 0):
            raise ValueError("timestamps must be non-negative")
        if len(ts) > 1 and np.any(ts[1:] < ts[:-1]):
            order = np.argsort(ts, kind="stable")
            ts, lv = ts[order], lv[order]
        with self._write_lock:
            self._version += 1
            try:
                self._apply(sensor, ts, lv)
            finally:
                self._version += 1

    def _apply(self, sensor, ts, lv):
        sd = self._sensors.get(sensor)
        if self.check_duplicates and len(ts) > 1 and np.any(ts[1:] == ts[:-1]):
            raise DuplicateFrameError(f"duplicate timestamp within batch for {sensor!r}")

        days = ts // DAY
        cuts = np.flatnonzero(days[1:] != days[:-1]) + 1
        bounds = np.concatenate(([0], cuts, [len(ts)]))
        # check everything before touching state so a rejected insert leaves no trace
        if self.check_duplicates and sd is not None:
            for a, b in zip(bounds[:-1], bounds[1:]):
                day0 = int(days[a]) * DAY
                chunk = sd.raw.get(day0)
                if chunk is not None and np.any(chunk[ts[a:b] - day0] != MISSING):
                    raise DuplicateFrameError(f"duplicate frame for {sensor!r} on day {day0}")
        if sd is None:
            sd = self._sensors[sensor] = _SensorData()
        for a, b in zip(bounds[:-1], bounds[1:]):
            day0 = int(days[a]) * DAY
            chunk = sd.raw.get(day0)
            if chunk is None:
                chunk = sd.raw[day0] = np.full(DAY, MISSING, dtype=np.int32)
            chunk[ts[a:b] - day0] = lv[a:b]

        # roll up: each level groups the previous level's partial aggregates
        groups = (ts, np.ones_like(lv), lv, lv, lv)
        for level in (LatticeLevel.MINUTE, LatticeLevel.FIVE_MINUTE, LatticeLevel.HOUR, LatticeLevel.DAY):
            groups = _group(level, *groups)
            self._merge(sd.nodes[level], *groups)
        # irregular levels both aggregate whole days
        for level in (LatticeLevel.WEEK, LatticeLevel.MONTH):
            self._merge(sd.nodes[level], *_group(level, *groups))

    def _apply_minute(self, sensor, ts, lv):
        # typical upload: <= 60 sorted frames inside one minute, so one node per level
        sd = self._sensors.get(sensor)
        t = ts[0]
        day0 = t - t % DAY
        a, n = t - day0, len(ts)
        where = slice(a, a + n) if ts[-1] - t == n - 1 else np.array(ts, dtype=np.int64) - day0
        chunk = sd.raw.get(day0) if sd is not None else None
        if self.check_duplicates and chunk is not None and np.any(chunk[where] != MISSING):
            raise DuplicateFrameError(f"duplicate frame for {sensor!r} on day {day0}")
        if sd is None:
            sd = self._sensors[sensor] = _SensorData()
        if chunk is None:
            chunk = sd.raw[day0] = np.full(DAY, MISSING, dtype=np.int32)
        chunk[where] = lv
        c, tot, lo, hi = n, sum(lv), min(lv), max(lv)
        for level in AGG_LEVELS:
            nodes = sd.nodes[level]
            k = span_start(level, t)
            old = nodes.get(k)
            nodes[k] = (c, tot, lo, hi) if old is None else (old[0] + c, old[1] + tot, min(old[2], lo), max(old[3], hi))

    @staticmethod
    def _merge(nodes, keys, cnt, tot, mn, mx):
        for k, c, s, lo, hi in zip(keys.tolist(), cnt.tolist(), tot.tolist(), mn.tolist(), mx.tolist()):
            old = nodes.get(k)
            if old is None:
                nodes[k] = (c, s, lo, hi)
            else:
                nodes[k] = (old[0] + c, old[1] + s, min(old[2], lo), max(old[3], hi))

    # -- reads ------------------------------------------------------------

    def _read(self, fn):
        while True:
            v = self._version
            if v & 1:
                time.sleep(0)
                continue
            try:
                out = fn()
            except RuntimeError:
                # dict resized under us by the writer
                continue
            if self._version == v:
                return out

    def node(self, sensor: str, level: LatticeLevel, start: int) -> LatticeNode:
        start = span_start(level, start)
        end = span_end(level, start)
        agg = self._read(lambda: self._span_agg(self._sensors.get(sensor), level, start, end))
        c, s, lo, hi = agg
        if c == 0:
            return LatticeNode(start, end, 0, None, None, None)
        return LatticeNode(start, end, c, s, lo, hi)

    def nodes(self, sensor: str, level: LatticeLevel) -> dict[int, tuple]:
        """Copy of every stored node at one level: ``{start: (count, sum, min, max)}``."""
        sd = self._sensors.get(sensor)
        if sd is None:
            return {}
        if level == LatticeLevel.RAW:
            return {t: (1, v, v, v) for t, v in self.frames(sensor)}
        return self._read(lambda: dict(sd.nodes[level]))

    def frames(self, sensor: str, start: int | None = None, end: int | None = None) -> list[tuple[int, int]]:
        """Raw ``(t, level)`` frames for a sensor in time order."""
        sd = self._sensors.get(sensor)
        if sd is None:
            return []
        ts, lv = self._read(lambda: self._raw_arrays(sd, start, end))
        return list(zip(ts.tolist(), lv.tolist()))

    def frame_arrays(self, sensor: str, start: int | None = None, end: int | None = None):
        sd = self._sensors.get(sensor)
        if sd is None:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return self._read(lambda: self._raw_arrays(sd, start, end))

    @staticmethod
    def _raw_arrays(sd, start, end):
        ts_parts, lv_parts = [], []
        for day0 in sorted(sd.raw):
            if start is not None and day0 + DAY <= start:
                continue
            if end is not None and day0 >= end:
                continue
            chunk = sd.raw[day0]
            idx = np.flatnonzero(chunk != MISSING)
            t = idx.astype(np.int64) + day0
            sel = np.ones(len(t), dtype=bool)
            if start is not None:
                sel &= t >= start
            if end is not None:
                sel &= t < end
            ts_parts.append(t[sel])
            lv_parts.append(chunk[idx][sel].astype(np.int64))
        if not ts_parts:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate(ts_parts), np.concatenate(lv_parts)

    def frame_count(self, sensor: str | None = None) -> int:
        names = [sensor] if sensor is not None else list(self._sensors)
        total = 0
        for name in names:
            sd = self._sensors.get(name)
            if sd is not None:
                total += sum(c for c, _, _, _ in sd.nodes[LatticeLevel.DAY].values())
        return total

    def _span_agg(self, sd, level, a, b):
        """Aggregate over ``[a, b)``, which lies inside one aligned span at ``level``."""
        if sd is None:
            return _EMPTY
        if level == LatticeLevel.RAW:
            return self._raw_agg(sd, a, b)
        s0 = span_start(level, a)
        if a == s0 and b == span_end(level, s0):
            self.node_reads += 1
            return sd.nodes[level].get(s0, _EMPTY)
        child = CHILD[level]
        if child == LatticeLevel.RAW:
            return self._raw_agg(sd, a, b)
        return fold(self._span_agg(sd, child, max(c0, a), min(c1, b)) for c0, c1 in decompose(a, b, child))

    def _raw_agg(self, sd, a, b):
        parts = []
        t = a
        while t < b:
            day0 = t - t % DAY
            hi = min(b, day0 + DAY)
            chunk = sd.raw.get(day0)
            if chunk is not None:
                vals = chunk[t - day0 : hi - day0]
                self.raw_reads += len(vals)
                vals = vals[vals != MISSING]
                if len(vals):
                    parts.append((len(vals), int(vals.sum(dtype=np.int64)), int(vals.min()), int(vals.max())))
            t = hi
        return fold(parts)

    def span_aggs(self, sensor: str, start: int, end: int, level: LatticeLevel) -> list[tuple[int, tuple]]:
        """``(span_start, (count, sum, min, max))`` for every aligned span intersecting the range."""
        sd = self._sensors.get(sensor)

        def run():
            return [
                (s0, self._span_agg(sd, level, max(s0, start), min(s1, end)))
                for s0, s1 in decompose(start, end, level)
            ]

        return self._read(run)

    def series(self, sensor: str, start: int, end: int, level: LatticeLevel, stat: Stat = Stat.MEAN_DB) -> list[SeriesPoint]:
        if end <= start:
            raise ValueError("query range must be non-empty")
        stat = Stat(stat)
        return [_point(s0, [agg], stat) for s0, agg in self.span_aggs(sensor, start, end, level)]

    def aggregate_series(self, sensors, start: int, end: int, level: LatticeLevel, stat: Stat = Stat.MEAN_DB) -> list[SeriesPoint]:
        sensors = sorted(set(sensors))
        if not sensors:
            raise ValueError("aggregate_series needs at least one sensor")
        if end <= start:
            raise ValueError("query range must be non-empty")
        stat = Stat(stat)

        def run():
            per_sensor = [
                [self._span_agg(self._sensors.get(s), level, max(s0, start), min(s1, end)) for s0, s1 in spans]
                for s in sensors
            ]
            return per_sensor

        spans = decompose(start, end, level)
        per_sensor = self._read(run)
        return [_point(s0, [col[i] for col in per_sensor], stat) for i, (s0, _) in enumerate(spans)]

    # -- digest -----------------------------------------------------------

    def state_digest(self) -> str:
        """Stable SHA-256 over raw frames and every aggregate node."""

        def run():
            h = hashlib.sha256()
            for name in sorted(self._sensors):
                sd = self._sensors[name]
                h.update(b"S" + name.encode() + b"\0")
                for day0 in sorted(sd.raw):
                    h.update(b"D%d\0" % day0)
                    h.update(sd.raw[day0].astype("<i4").tobytes())
                for level in AGG_LEVELS:
                    nodes = sd.nodes[level]
                    h.update(b"L%d\0" % level)
                    for k in sorted(nodes):
                        h.update(("%d,%d,%d,%d,%d;" % (k, *nodes[k])).encode())
            return h.hexdigest()

        return self._read(run)


def _point(start: int, aggs, stat: Stat) -> SeriesPoint:
    live = [a for a in aggs if a[0] > 0]
    count, total, lo, hi = fold(live)
    if count == 0:
        return SeriesPoint(start, None, 0)
    if stat == Stat.COUNT:
        value = count
    elif stat == Stat.MIN:
        value = lo
    elif stat == Stat.MAX:
        value = hi
    elif stat == Stat.MEAN_DB or len(live) == 1:
        value = round_div(total, count)
    else:
        value = energetic_mean(live)
    return SeriesPoint(start, value, count)


def energetic_mean(aggs) -> int:
    """Count-weighted power mean of per-contributor span means, in mdB."""
    power = 0.0
    count = 0
    for c, s, _, _ in aggs:
        if c:
            power += c * 10.0 ** (s / c / 10_000)
            count += c
    return db_to_mdb(10.0 * np.log10(power / count))


SERIES_COLUMNS = ("span_start", "stat_mdb", "count")


def series_to_csv(points, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for p in points:
        w.writerow([p.start, "" if p.value is None else p.value, p.count])
    return buf.getvalue()


def series_from_csv(text: str) -> list[SeriesPoint]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = csv.DictReader(lines)
    out = []
    for r in rows:
        v = r["stat_mdb"]
        out.append(SeriesPoint(int(r["span_start"]), None if v == "" else int(v), int(r["count"])))
    return out


def series_to_json(points) -> str:
    return json.dumps([{"span_start": p.start, "stat_mdb": p.value, "count": p.count} for p in points])
