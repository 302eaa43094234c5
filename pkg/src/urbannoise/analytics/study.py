"""Complaint validation study: focus area, complaint filtering, evidence matching, report."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..core import (
    DAY,
    Complaint,
    ComplaintCategory,
    GeoPoint,
    Resolution,
    Route,
    SourceClass,
    distance,
)
from ..lattice import LatticeLevel, LatticeStore, span_start
from .detect import AnalysisConfig, DetectedEvent, detect_events

logger = logging.getLogger(__name__)

COMPLAINT_COLUMNS = ("id", "category", "created_at", "x", "y", "route", "resolution")


def after_hours(t: int, tz_offset: int = 0, start: int = 18 * 3600, end: int = 7 * 3600) -> bool:
    """True iff local time of day lies in the half-open window [start, end), wrapping midnight."""
    sod = (t + tz_offset) % DAY
    if start <= end:
        return start <= sod < end
    return sod >= start or sod < end


def evidence_window(t: int, tz_offset: int = 0, start: int = 18 * 3600, end: int = 7 * 3600) -> tuple[int, int]:
    """The after-hours window containing ``t``, or the most recent completed one.

    Returned as UTC ``[w0, w1)``. Only overnight windows (start > end) and
    same-day windows are supported; both are anchored at the local midnight
    preceding ``t``.
    """
    local = t + tz_offset
    midnight = local - local % DAY
    if start > end:
        if local - midnight >= start:
            w0 = midnight + start
        else:
            w0 = midnight - DAY + start
        w1 = w0 - start + DAY + end
    else:
        w0 = midnight + start
        if local - midnight < start:
            w0 -= DAY
        w1 = w0 - start + end
    return w0 - tz_offset, w1 - tz_offset


@dataclass(frozen=True)
class FocusArea:
    """Union of closed disks of ``radius`` meters around sensor locations."""

    sensors: dict = field(default_factory=dict)  # id -> GeoPoint
    radius: float = 100.0

    def contains(self, p: GeoPoint) -> bool:
        return any(distance(p, loc) <= self.radius for loc in self.sensors.values())

    def sensors_near(self, p: GeoPoint) -> list[str]:
        return sorted(sid for sid, loc in self.sensors.items() if distance(p, loc) <= self.radius)


def build_focus_area(sensors, radius: float = 100.0) -> FocusArea:
    """``sensors``: mapping id -> GeoPoint or iterable of objects with ``id``/``location``."""
    if hasattr(sensors, "items"):
        locs = dict(sensors)
    else:
        locs = {s.id: s.location for s in sensors}
    if not locs:
        raise ValueError("focus area needs at least one active sensor")
    return FocusArea(locs, radius)


def sensor_activity(store: LatticeStore, resolution: int = 300):
    """Predicate ``(sensor, t) -> bool``: the sensor reported frames in the span containing ``t``."""
    level = {60: LatticeLevel.MINUTE, 300: LatticeLevel.FIVE_MINUTE, 3600: LatticeLevel.HOUR}[resolution]

    def active(sensor: str, t: int) -> bool:
        return store.node(sensor, level, span_start(level, t)).count > 0

    return active


def filter_complaints(complaints, area: FocusArea, study_range, is_active, cfg: AnalysisConfig | None = None) -> list[Complaint]:
    """DEP-routed, in-area, sensor-covered, non-duplicate complaints in time order.

    A complaint duplicates an already kept one with the same category within
    ``dedup_radius`` meters and ``dedup_window`` seconds.
    """
    cfg = cfg or AnalysisConfig()
    start, end = study_range
    kept: list[Complaint] = []
    for c in sorted(complaints, key=lambda c: (c.created_at, c.id)):
        if c.route != Route.DEP:
            continue
        if not start <= c.created_at < end:
            continue
        near = area.sensors_near(c.location)
        if not near or not any(is_active(s, c.created_at) for s in near):
            continue
        dup = False
        for k in reversed(kept):
            if c.created_at - k.created_at > cfg.dedup_window:
                break
            if k.category == c.category and distance(k.location, c.location) <= cfg.dedup_radius:
                dup = True
                break
        if not dup:
            kept.append(c)
    return kept


def match_evidence(complaint: Complaint, events, sensor_locations: dict, cfg: AnalysisConfig | None = None) -> list[DetectedEvent]:
    """Construction events backing an after-hours construction complaint.

    Candidates are construction-attributed events at sensors within
    ``radius`` of the complaint that overlap the after-hours window containing
    the complaint time, or the last completed window when filed in daytime.
    """
    cfg = cfg or AnalysisConfig()
    if complaint.category != ComplaintCategory.AFTER_HOURS_CONSTRUCTION:
        return []
    w0, w1 = evidence_window(complaint.created_at, cfg.tz_offset, cfg.after_hours_start, cfg.after_hours_end)
    out = []
    for ev in events:
        if not ev.attributed.construction:
            continue
        loc = sensor_locations.get(ev.sensor)
        if loc is None or distance(loc, complaint.location) > cfg.radius:
            continue
        if ev.overlaps(w0, w1):
            out.append(ev)
    return out


@dataclass
class StudyReport:
    study_start: int
    study_end: int
    sensors: list[str]
    complaints: list[Complaint]
    events: list[DetectedEvent]
    evidence: dict[str, list[DetectedEvent]]
    windows: dict[str, tuple[int, int]]
    config_hash: str = ""

    def complaint_counts(self) -> dict[str, int]:
        counts = {c.value: 0 for c in ComplaintCategory}
        for c in self.complaints:
            counts[c.category.value] += 1
        return counts

    def resolution_by_category(self) -> dict[str, dict[str, int]]:
        out = {c.value: {r.value: 0 for r in Resolution} for c in ComplaintCategory}
        for c in self.complaints:
            out[c.category.value][c.resolution.value] += 1
        return out

    def resolution_totals(self) -> dict[str, int]:
        out = {r.value: 0 for r in Resolution}
        for c in self.complaints:
            out[c.resolution.value] += 1
        return out

    def event_counts_by_class(self) -> dict[str, int]:
        counts = {c.value: 0 for c in SourceClass}
        for e in self.events:
            counts[e.attributed.value] += 1
        return counts

    def event_counts_by_sensor(self) -> dict[str, dict[str, int]]:
        out = {s: {} for s in self.sensors}
        for e in self.events:
            per = out.setdefault(e.sensor, {})
            per[e.attributed.value] = per.get(e.attributed.value, 0) + 1
        return out

    @property
    def after_hours_construction(self) -> list[Complaint]:
        return [c for c in self.complaints if c.category == ComplaintCategory.AFTER_HOURS_CONSTRUCTION]

    @property
    def with_evidence(self) -> int:
        return sum(1 for c in self.after_hours_construction if self.evidence.get(c.id))

    @property
    def evidence_fraction(self) -> float | None:
        n = len(self.after_hours_construction)
        return None if n == 0 else self.with_evidence / n

    def to_dict(self) -> dict:
        by_class = self.event_counts_by_class()
        return {
            "config_hash": self.config_hash,
            "study_range": {"start": self.study_start, "end": self.study_end},
            "sensors": list(self.sensors),
            "complaints_total": len(self.complaints),
            "complaint_counts": self.complaint_counts(),
            "resolution_by_category": self.resolution_by_category(),
            "resolution_totals": self.resolution_totals(),
            "events_total": len(self.events),
            "construction_events": sum(n for c, n in by_class.items() if SourceClass(c).construction),
            "event_counts_by_class": by_class,
            "event_counts_by_sensor": self.event_counts_by_sensor(),
            "evidence": {
                "after_hours_construction_complaints": len(self.after_hours_construction),
                "with_evidence": self.with_evidence,
                "fraction": self.evidence_fraction,
            },
            "complaints": [
                {
                    "id": c.id,
                    "category": c.category.value,
                    "created_at": c.created_at,
                    "x": c.location.x,
                    "y": c.location.y,
                    "route": c.route.value,
                    "resolution": c.resolution.value,
                    "evidence_window": list(self.windows[c.id]) if c.id in self.windows else None,
                    "evidence": [_event_dict(e) for e in self.evidence.get(c.id, [])],
                }
                for c in self.complaints
            ],
            "events": [_event_dict(e) for e in self.events],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def csv_tables(self) -> dict[str, str]:
        """Frozen-column CSV tables keyed by file name."""
        header = f"# config_sha256={self.config_hash}\n" if self.config_hash else ""
        tables = {}

        def table(name, columns, rows):
            buf = io.StringIO()
            buf.write(header)
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(columns)
            w.writerows(rows)
            tables[name] = buf.getvalue()

        table("complaint_counts.csv", ("category", "count"), self.complaint_counts().items())
        table(
            "resolutions.csv",
            ("category", "resolution", "count"),
            [(c, r, n) for c, per in self.resolution_by_category().items() for r, n in per.items()],
        )
        table("event_classes.csv", ("class", "count"), self.event_counts_by_class().items())
        table(
            "events.csv",
            ("sensor", "start", "end", "peak_time", "peak_mdb", "background_mdb", "class"),
            [(e.sensor, e.start, e.end, e.peak_time, e.peak, e.background_at_peak, e.attributed.value) for e in self.events],
        )
        frac = self.evidence_fraction
        table(
            "evidence.csv",
            ("complaint_id", "category", "created_at", "resolution", "evidence_events", "sensors"),
            [
                (c.id, c.category.value, c.created_at, c.resolution.value, len(self.evidence.get(c.id, [])),
                 ";".join(sorted({e.sensor for e in self.evidence.get(c.id, [])})))
                for c in self.after_hours_construction
            ],
        )
        table(
            "evidence_summary.csv",
            ("after_hours_construction_complaints", "with_evidence", "fraction"),
            [(len(self.after_hours_construction), self.with_evidence, "" if frac is None else repr(frac))],
        )
        return tables

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "study_report.json").write_text(self.to_json() + "\n")
        for name, text in self.csv_tables().items():
            (out / name).write_text(text)


def _event_dict(e: DetectedEvent) -> dict:
    return {
        "sensor": e.sensor,
        "start": e.start,
        "end": e.end,
        "peak_time": e.peak_time,
        "peak_mdb": e.peak,
        "background_mdb": e.background_at_peak,
        "class": e.attributed.value,
        "spans": e.spans,
    }


def active_sensors(store: LatticeStore, sensor_locations: dict, start: int, end: int) -> dict:
    """Sensors with at least one frame in ``[start, end)``."""
    out = {}
    for sid, loc in sensor_locations.items():
        if any(p.count for p in store.series(sid, start, end, LatticeLevel.DAY, "Count")):
            out[sid] = loc
    return out


def study_report(
    store: LatticeStore,
    sensor_locations: dict,
    complaints,
    study_range: tuple[int, int],
    cfg: AnalysisConfig | None = None,
    attribute=None,
    config_hash: str = "",
) -> StudyReport:
    """Run the full pipeline over ``study_range`` and assemble the report."""
    cfg = cfg or AnalysisConfig()
    start, end = study_range
    active = active_sensors(store, sensor_locations, start, end)
    events: list[DetectedEvent] = []
    for sid in sorted(active):
        events.extend(detect_events(store, sid, start, end, cfg, attribute))
    if not active:
        logger.warning("no sensor reported data in the study range; report is empty")
        return StudyReport(start, end, [], [], events, {}, {}, config_hash)
    area = build_focus_area(active, cfg.radius)
    kept = filter_complaints(complaints, area, study_range, sensor_activity(store, cfg.resolution), cfg)
    evidence = {}
    windows = {}
    for c in kept:
        if c.category == ComplaintCategory.AFTER_HOURS_CONSTRUCTION:
            windows[c.id] = evidence_window(c.created_at, cfg.tz_offset, cfg.after_hours_start, cfg.after_hours_end)
            evidence[c.id] = match_evidence(c, events, active, cfg)
    return StudyReport(start, end, sorted(active), kept, events, evidence, windows, config_hash)


def read_complaints_csv(text: str) -> list[Complaint]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        return []
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != COMPLAINT_COLUMNS:
        raise ValueError(f"complaint CSV header must be {','.join(COMPLAINT_COLUMNS)}")
    out = []
    seen = set()
    for lineno, row in enumerate(reader, start=2):
        try:
            c = Complaint.from_strings(*(row[k] for k in COMPLAINT_COLUMNS))
        except (TypeError, ValueError) as e:
            raise ValueError(f"complaint CSV line {lineno}: {e}") from None
        if c.id in seen:
            raise ValueError(f"complaint CSV line {lineno}: duplicate id {c.id!r}")
        seen.add(c.id)
        out.append(c)
    return out


def complaints_to_csv(complaints) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPLAINT_COLUMNS)
    for c in complaints:
        w.writerow([c.id, c.category.value, c.created_at, repr(c.location.x), repr(c.location.y), c.route.value, c.resolution.value])
    return buf.getvalue()
