"""Simulated sensor node: minute batches, random snippet records, at-least-once upload."""

from __future__ import annotations

import asyncio
import bisect
import hashlib
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .core import LEVEL_MAX, LEVEL_MIN, SourceClass, distance
from .ingest import protocol
from .soundscape import (
    DAY,
    ScenarioSpec,
    SensorSpec,
    generate_timeline,
    propagate,
    sensor_levels,
    stream,
)

logger = logging.getLogger(__name__)

BATCH_SECONDS = 60
SNIPPET_SECONDS = protocol.SNIPPET_SECONDS
AUDIBLE_FLOOR = LEVEL_MIN
_STREAM_SNIPPET = 2


def apply_calibration(raw: int, offset: int) -> int:
    """``raw + offset`` in mdB, clamped to the sensor's dynamic range."""
    return min(max(raw + offset, LEVEL_MIN), LEVEL_MAX)


@dataclass(frozen=True)
class Batch:
    sensor: str
    seq: int
    frames: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(self.frames) > BATCH_SECONDS:
            raise ValueError(f"batch holds at most {BATCH_SECONDS} frames")
        ts = [f[0] for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("batch frames must be strictly increasing in time")
        if ts and ts[0] // BATCH_SECONDS != ts[-1] // BATCH_SECONDS:
            raise ValueError("batch frames must fall in one upload interval")

    def to_message(self) -> dict:
        return {"t": "batch", "sensor": self.sensor, "seq": self.seq, "frames": self.frames}

    @property
    def key(self) -> int:
        return self.seq


@dataclass(frozen=True)
class SnippetRecord:
    sensor: str
    sid: int
    start: int
    payload_digest: str
    truth_tags: tuple[SourceClass, ...] = ()
    duration: int = SNIPPET_SECONDS

    def __post_init__(self):
        if self.duration != SNIPPET_SECONDS:
            raise ValueError(f"snippets last exactly {SNIPPET_SECONDS} s")

    def to_message(self) -> dict:
        return protocol.snippet(self.sensor, self.sid, self.start, self.payload_digest,
                                [t.value for t in self.truth_tags], self.duration)

    @property
    def key(self) -> int:
        return self.sid


def snippet_starts(spec: ScenarioSpec, sensor_index: int, rate_per_hour: float | None = None) -> list[int]:
    """Poisson arrival instants over the scenario, integer seconds."""
    rate = spec.snippet_rate if rate_per_hour is None else rate_per_hour
    if rate <= 0:
        return []
    rng = stream(spec.seed, _STREAM_SNIPPET, sensor_index)
    mean_gap = 3600.0 / rate
    out = []
    t = float(spec.origin_epoch)
    while True:
        t += rng.exponential(mean_gap)
        if t >= spec.end_epoch:
            return out
        out.append(int(t))


class _EventIndex:
    """Timeline sorted by start, for overlap lookups."""

    def __init__(self, timeline):
        self.events = sorted(timeline, key=lambda e: e.start)
        self.starts = [e.start for e in self.events]
        self.longest = max((e.end - e.start for e in self.events), default=0)

    def overlapping(self, t0: int, t1: int):
        lo = bisect.bisect_left(self.starts, t0 - self.longest)
        hi = bisect.bisect_left(self.starts, t1)
        return [e for e in self.events[lo:hi] if e.end > t0]


def truth_tags(sensor: SensorSpec, start: int, timeline, duration: int = SNIPPET_SECONDS) -> tuple[SourceClass, ...]:
    """Classes of events audible at the sensor at some point in ``[start, start + duration)``."""
    index = timeline if isinstance(timeline, _EventIndex) else _EventIndex(timeline)
    tags = {
        ev.source
        for ev in index.overlapping(start, start + duration)
        if propagate(ev.emission_1m, distance(ev.location, sensor.location)) >= AUDIBLE_FLOOR
    }
    return tuple(sorted(tags, key=lambda c: c.value))


def node_messages(spec: ScenarioSpec, sensor_index: int, timeline=None,
                  snippet_rate: float | None = None) -> Iterator[Batch | SnippetRecord]:
    """Everything one node uploads, in upload order.

    Frames are grouped by UTC minute; a snippet follows the batch that
    completes its 10 s window.
    """
    if timeline is None:
        timeline = generate_timeline(spec)
    sensor = spec.sensors[sensor_index]
    index = _EventIndex(timeline)
    pending = snippet_starts(spec, sensor_index, snippet_rate)
    pi = 0
    seq = 0
    sid = 0
    n_days = (spec.duration + DAY - 1) // DAY
    for day in range(n_days):
        d0 = spec.origin_epoch + day * DAY
        ts, lv = sensor_levels(spec, sensor_index, timeline, d0, d0 + DAY)
        if len(ts) == 0:
            continue
        minutes = ts // BATCH_SECONDS
        cuts = np.flatnonzero(minutes[1:] != minutes[:-1]) + 1
        pairs = list(zip(ts.tolist(), lv.tolist()))
        bounds = [0, *cuts.tolist(), len(pairs)]
        for a, b in zip(bounds[:-1], bounds[1:]):
            yield Batch(sensor.id, seq, tuple(pairs[a:b]))
            seq += 1
            horizon = ts[b - 1] + 1
            while pi < len(pending) and pending[pi] + SNIPPET_SECONDS <= horizon:
                yield _snippet(spec, sensor, sid, pending[pi], ts, lv, index)
                sid += 1
                pi += 1
    # snippets whose window runs past the last frame
    while pi < len(pending):
        yield _snippet(spec, sensor, sid, pending[pi], np.empty(0, np.int64), np.empty(0, np.int64), index)
        sid += 1
        pi += 1


def _snippet(spec, sensor, sid, start, ts, lv, timeline) -> SnippetRecord:
    # stand-in for an audio payload: hash of the levels the node saw during the window
    lo, hi = np.searchsorted(ts, [start, start + SNIPPET_SECONDS])
    h = hashlib.sha256(f"{spec.seed}:{sensor.id}:{sid}:{start}:".encode())
    h.update(np.asarray(lv[lo:hi], dtype="<i8").tobytes())
    return SnippetRecord(sensor.id, sid, start, h.hexdigest(), truth_tags(sensor, start, timeline))


# --------------------------------------------------------------------------
# uplink


class UplinkDown(RuntimeError):
    """Retry budget exhausted with a message still unacknowledged."""


class UplinkRefused(RuntimeError):
    """Server rejected a message permanently (bad key, out-of-range data, ...)."""

    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code


@dataclass(frozen=True)
class Uplink:
    host: str
    port: int
    key: str


@dataclass
class RetryPolicy:
    """Exponential backoff, capped, with equal jitter."""

    base: float = 1.0
    cap: float = 60.0
    max_attempts: int = 10
    ack_timeout: float = 5.0
    jitter: bool = True
    sleep: Callable = asyncio.sleep

    def delay(self, attempt: int, rng: random.Random) -> float:
        d = min(self.cap, self.base * 2 ** (attempt - 1))
        return d / 2 + rng.uniform(0, d / 2) if self.jitter else d


@dataclass
class NodeReport:
    sensor: str
    batches: int = 0
    snippets: int = 0
    frames: int = 0
    attempts: int = 0
    reconnects: int = 0


class _Connection:
    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer

    @classmethod
    async def open(cls, uplink: Uplink, sensor: str) -> _Connection:
        reader, writer = await asyncio.open_connection(uplink.host, uplink.port, limit=protocol.MAX_LINE)
        conn = cls(reader, writer)
        writer.write(protocol.encode(protocol.hello(sensor, uplink.key)))
        return conn

    async def exchange(self, msg: dict, field_name: str, key: int) -> None:
        self.writer.write(protocol.encode(msg))
        await self.writer.drain()
        while True:
            line = await self.reader.readline()
            if not line:
                raise ConnectionResetError("server closed the connection")
            reply = protocol.decode(line)
            if reply["t"] == "err":
                raise UplinkRefused(reply.get("code", "?"), reply.get("detail", ""))
            if reply["t"] == "ack" and reply.get(field_name) == key:
                return
            # stale ack from an earlier attempt: keep waiting

    def close(self) -> None:
        self.writer.close()


async def run_node(sensor: SensorSpec, scenario: ScenarioSpec, uplink: Uplink, timeline=None,
                   policy: RetryPolicy | None = None, snippet_rate: float | None = None,
                   messages=None) -> NodeReport:
    """Upload every message for ``sensor``, one in flight at a time, until each is acknowledged.

    Raises :class:`UplinkDown` once ``policy.max_attempts`` consecutive
    attempts fail for one message, and :class:`UplinkRefused` on a
    permanent server error. Nothing is skipped on the way.
    """
    policy = policy or RetryPolicy()
    rng = random.Random(f"{scenario.seed}:{sensor.id}")
    if messages is None:
        messages = node_messages(scenario, scenario.sensor_index(sensor.id), timeline, snippet_rate)
    report = NodeReport(sensor.id)
    conn = None
    try:
        for item in messages:
            wire = item.to_message()
            field_name = "seq" if isinstance(item, Batch) else "sid"
            failures = 0
            while True:
                report.attempts += 1
                try:
                    if conn is None:
                        conn = await _Connection.open(uplink, sensor.id)
                        report.reconnects += 1
                    await asyncio.wait_for(conn.exchange(wire, field_name, item.key), policy.ack_timeout)
                    break
                except (OSError, asyncio.TimeoutError, protocol.ProtocolError) as e:
                    if conn is not None:
                        conn.close()
                        conn = None
                    failures += 1
                    if failures >= policy.max_attempts:
                        raise UplinkDown(
                            f"sensor {sensor.id}: {field_name} {item.key} unacknowledged after "
                            f"{failures} attempts ({type(e).__name__}: {e})"
                        ) from e
                    await policy.sleep(policy.delay(failures, rng))
            if isinstance(item, Batch):
                report.batches += 1
                report.frames += len(item.frames)
            else:
                report.snippets += 1
    finally:
        if conn is not None:
            conn.close()
    report.reconnects = max(report.reconnects - 1, 0)
    return report


@dataclass
class FleetResult:
    reports: list[NodeReport] = field(default_factory=list)

    @property
    def frames(self) -> int:
        return sum(r.frames for r in self.reports)


async def run_fleet(scenario: ScenarioSpec, uplink: Uplink, timeline=None, policy: RetryPolicy | None = None,
                    snippet_rate: float | None = None) -> FleetResult:
    """Run every node of the scenario concurrently."""
    if timeline is None:
        timeline = generate_timeline(scenario)
    reports = await asyncio.gather(*(
        run_node(s, scenario, uplink, timeline, policy, snippet_rate) for s in scenario.sensors
    ))
    return FleetResult(list(reports))
