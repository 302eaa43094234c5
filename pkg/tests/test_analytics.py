import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from urbannoise.analytics import (
    AnalysisConfig,
    DetectedEvent,
    after_hours,
    background,
    build_focus_area,
    detect_events,
    event_is_sound,
    evidence_window,
    filter_complaints,
    match_evidence,
    study_report,
)
from urbannoise.core import Complaint, ComplaintCategory, GeoPoint, Resolution, Route, SourceClass
from urbannoise.lattice import LatticeStore

T0 = 1_699_920_000  # 2023-11-14 00:00 UTC
CFG = AnalysisConfig()


def block_store(levels_db, sensor="s", t0=T0, noise=None):
    """One 5-minute span per entry (None = no data); constant level within a span."""
    store = LatticeStore()
    for i, lv in enumerate(levels_db):
        if lv is None:
            continue
        ts = np.arange(t0 + 300 * i, t0 + 300 * (i + 1))
        vals = np.full(300, int(round(lv * 1000)))
        if noise is not None:
            vals = vals + noise.integers(-800, 800, size=300)
        store.insert_arrays(sensor, ts, vals)
    return store


def test_background_constant_after_warmup():
    store = block_store([55.0] * 60)
    bg = background(store, "s", T0, T0 + 60 * 300)
    assert bg.starts[0] == T0
    # 25% of a 24-span window = 6 spans of history
    assert all(b is None for b in bg.background[:6])
    assert all(b == 55000 for b in bg.background[6:])


def test_background_warmup_gap_rule():
    store = block_store([55.0] * 18)  # first 90 minutes of data
    bg = background(store, "s", T0, T0 + 18 * 300)
    first_defined = next(i for i, b in enumerate(bg.background) if b is not None)
    assert first_defined == 6
    assert bg.levels[0] == 55000


def test_background_ramp_matches_brute_force():
    levels = [50 + 0.25 * i for i in range(100)]
    store = block_store(levels)
    bg = background(store, "s", T0, T0 + 100 * 300)
    means = [round(v * 1000) for v in levels]
    assert list(bg.background) == oracles.trailing_background(means, 24, 6)


def test_background_excludes_current_span():
    store = block_store([55.0] * 30 + [90.0])
    bg = background(store, "s", T0, T0 + 31 * 300)
    assert bg.background[30] == 55000
    assert bg.levels[30] == 90000


def test_flat_series_has_no_events():
    assert detect_events(block_store([55.0] * 100), "s", T0, T0 + 100 * 300) == []


def test_single_block_event():
    levels = [55.0] * 40 + [70.0] * 4 + [55.0] * 20
    store = block_store(levels)
    events = detect_events(store, "s", T0, T0 + len(levels) * 300)
    assert len(events) == 1
    ev = events[0]
    assert ev.spans == 4
    assert (ev.start, ev.end) == (T0 + 40 * 300, T0 + 44 * 300)
    assert ev.peak == 70000
    assert ev.start <= ev.peak_time < ev.end
    assert ev.attributed == SourceClass.UNKNOWN
    assert event_is_sound(store, ev)


def test_blocks_split_by_one_quiet_span():
    levels = [55.0] * 40 + [70.0] * 2 + [55.0] + [70.0] * 2 + [55.0] * 10
    events = detect_events(block_store(levels), "s", T0, T0 + len(levels) * 300)
    assert len(events) == 2
    assert [e.spans for e in events] == [2, 2]


def test_gap_breaks_run():
    levels = [55.0] * 40 + [70.0] * 2 + [None] + [70.0] * 2 + [55.0] * 10
    events = detect_events(block_store(levels), "s", T0, T0 + len(levels) * 300)
    assert len(events) == 2


def test_attribution_callback_used_at_peak():
    levels = [55.0] * 40 + [70.0, 72.0, 71.0] + [55.0] * 5
    seen = []

    def attribute(sensor, a, b):
        seen.append((sensor, a, b))
        return SourceClass.JACKHAMMER

    ev = detect_events(block_store(levels), "s", T0, T0 + len(levels) * 300, attribute=attribute)[0]
    assert ev.attributed == SourceClass.JACKHAMMER
    assert seen == [("s", T0 + 41 * 300, T0 + 42 * 300)]
    assert ev.peak == 72000


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), shift=st.integers(-5000, 9000))
def test_detection_is_scale_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    levels = list(55 + rng.normal(0, 2, size=120))
    for _ in range(4):
        i = int(rng.integers(30, 115))
        for j in range(i, min(i + int(rng.integers(1, 6)), 120)):
            levels[j] += float(rng.uniform(5, 20))
    store = block_store(levels, noise=np.random.default_rng(seed))
    shifted = LatticeStore()
    ts, lv = store.frame_arrays("s")
    shifted.insert_arrays("s", ts, lv + shift)
    a = detect_events(store, "s", T0, T0 + 120 * 300)
    b = detect_events(shifted, "s", T0, T0 + 120 * 300)
    assert [(e.start, e.end) for e in a] == [(e.start, e.end) for e in b]


@pytest.mark.parametrize(
    "hms, expected",
    [((18, 30, 0), True), ((12, 0, 0), False), ((6, 59, 59), True), ((7, 0, 0), False),
     ((18, 0, 0), True), ((17, 59, 59), False), ((0, 0, 0), True), ((23, 59, 59), True)],
)
def test_after_hours(hms, expected):
    h, m, s = hms
    assert after_hours(T0 + h * 3600 + m * 60 + s) is expected


def test_after_hours_respects_tz_offset():
    # 23:00 UTC is 18:00 in UTC-5
    assert after_hours(T0 + 23 * 3600, tz_offset=-5 * 3600)
    assert not after_hours(T0 + 13 * 3600, tz_offset=-5 * 3600)


def test_after_hours_partitions_every_day():
    for day in range(3):
        inside = sum(after_hours(T0 + day * 86400 + s) for s in range(0, 86400, 60))
        assert inside == 13 * 60  # 18:00-07:00 is 13 h


def test_evidence_window_rule():
    # during the window, before and after midnight
    assert evidence_window(T0 + 23 * 3600) == (T0 + 18 * 3600, T0 + 86400 + 7 * 3600)
    assert evidence_window(T0 + 86400 + 2 * 3600) == (T0 + 18 * 3600, T0 + 86400 + 7 * 3600)
    # daytime -> the window that just ended
    assert evidence_window(T0 + 86400 + 10 * 3600) == (T0 + 18 * 3600, T0 + 86400 + 7 * 3600)
    assert evidence_window(T0 + 86400 + 7 * 3600) == (T0 + 18 * 3600, T0 + 86400 + 7 * 3600)


@given(st.integers(0, 2_000_000_000), st.sampled_from([0, -5 * 3600, 3600]))
def test_evidence_window_contains_or_precedes(t, tz):
    w0, w1 = evidence_window(t, tz)
    assert w1 - w0 == 13 * 3600
    assert after_hours(w0, tz) and not after_hours(w1, tz)
    if after_hours(t, tz):
        assert w0 <= t < w1
    else:
        assert w1 <= t < w1 + 11 * 3600


def test_focus_area_membership():
    area = build_focus_area({"a": GeoPoint(0, 0), "b": GeoPoint(1000, 0)})
    assert area.contains(GeoPoint(50, 0))
    assert not area.contains(GeoPoint(150, 0))
    assert area.contains(GeoPoint(100.0, 0))
    assert area.contains(GeoPoint(1000, -60))
    assert area.sensors_near(GeoPoint(1000, 30)) == ["b"]
    with pytest.raises(ValueError):
        build_focus_area({})


def complaint(cid, t, x=10.0, y=0.0, category=ComplaintCategory.AFTER_HOURS_CONSTRUCTION,
              route=Route.DEP, resolution=Resolution.VIOLATION_NOT_OBSERVED):
    return Complaint(cid, category, t, GeoPoint(x, y), route, resolution)


def always_active(sensor, t):
    return True


def test_filter_excludes_non_dep_route():
    area = build_focus_area({"a": GeoPoint(0, 0)})
    cs = [complaint("c1", T0 + 100, route=Route.OTHER), complaint("c2", T0 + 200)]
    kept = filter_complaints(cs, area, (T0, T0 + 86400), always_active)
    assert [c.id for c in kept] == ["c2"]


def test_filter_excludes_complaints_during_outage():
    store = block_store([55.0] * 12)  # data for the first hour only
    from urbannoise.analytics import sensor_activity

    area = build_focus_area({"s": GeoPoint(0, 0)})
    cs = [complaint("c1", T0 + 1800), complaint("c2", T0 + 7200, x=40)]
    kept = filter_complaints(cs, area, (T0, T0 + 86400), sensor_activity(store))
    assert [c.id for c in kept] == ["c1"]


def test_filter_drops_duplicates():
    area = build_focus_area({"a": GeoPoint(0, 0)})
    cs = [
        complaint("c1", T0 + 1000),
        complaint("c2", T0 + 1300, x=15.0),          # 5 min later, 5 m away: duplicate
        complaint("c3", T0 + 1300, x=50.0),          # 40 m away: distinct
        complaint("c4", T0 + 1000 + 3600),           # an hour later: distinct
        complaint("c5", T0 + 1100, category=ComplaintCategory.TRAFFIC),  # other category
    ]
    kept = filter_complaints(cs, area, (T0, T0 + 86400), always_active)
    assert [c.id for c in kept] == ["c1", "c5", "c3", "c4"]


def test_filter_excludes_outside_area_and_range():
    area = build_focus_area({"a": GeoPoint(0, 0)})
    cs = [complaint("c1", T0 + 10, x=150.0), complaint("c2", T0 - 10), complaint("c3", T0 + 10)]
    kept = filter_complaints(cs, area, (T0, T0 + 86400), always_active)
    assert [c.id for c in kept] == ["c3"]


def ev(sensor, start, end, cls):
    return DetectedEvent(sensor, start, end, 80000, start, 55000, cls, (end - start) // 300)


def test_match_evidence_same_night():
    locs = {"a": GeoPoint(0, 0)}
    jack = ev("a", T0 + 22 * 3600, T0 + 22 * 3600 + 1200, SourceClass.JACKHAMMER)
    c = complaint("c1", T0 + 23 * 3600, x=30.0)
    assert match_evidence(c, [jack], locs) == [jack]


def test_match_evidence_requires_construction_class():
    locs = {"a": GeoPoint(0, 0)}
    siren = ev("a", T0 + 22 * 3600, T0 + 22 * 3600 + 600, SourceClass.SIREN)
    assert match_evidence(complaint("c1", T0 + 23 * 3600), [siren], locs) == []


def test_match_evidence_preceding_window():
    locs = {"a": GeoPoint(0, 0)}
    jack = ev("a", T0 + 23 * 3600, T0 + 23 * 3600 + 900, SourceClass.JACKHAMMER)
    morning = complaint("c1", T0 + 86400 + 10 * 3600)
    assert match_evidence(morning, [jack], locs) == [jack]
    # the following night is not "preceding"
    assert match_evidence(complaint("c2", T0 + 10 * 3600), [jack], locs) == []


def test_match_evidence_distance_and_category():
    locs = {"a": GeoPoint(0, 0), "far": GeoPoint(500, 0)}
    jack_far = ev("far", T0 + 22 * 3600, T0 + 22 * 3600 + 900, SourceClass.JACKHAMMER)
    assert match_evidence(complaint("c1", T0 + 23 * 3600), [jack_far], locs) == []
    jack = ev("a", T0 + 22 * 3600, T0 + 22 * 3600 + 900, SourceClass.JACKHAMMER)
    traffic = complaint("c2", T0 + 23 * 3600, category=ComplaintCategory.TRAFFIC)
    assert match_evidence(traffic, [jack], locs) == []


def test_report_with_no_complaints():
    store = block_store([55.0] * 100)
    rep = study_report(store, {"s": GeoPoint(0, 0)}, [], (T0, T0 + 100 * 300))
    d = rep.to_dict()
    assert d["complaints_total"] == 0
    assert all(v == 0 for v in d["complaint_counts"].values())
    assert d["evidence"]["fraction"] is None
    assert d["events_total"] == 0


def test_report_counts_and_evidence():
    levels = [55.0] * 24 * 12
    # 20-minute 75 dBA sessions at 19:00 and 22:00 UTC
    for h in (19, 22):
        for j in range(4):
            levels[h * 12 + j] = 75.0
    store = block_store(levels)

    def attribute(sensor, a, b):
        return SourceClass.JACKHAMMER if a < T0 + 20 * 3600 else SourceClass.SIREN

    cs = [
        complaint("c1", T0 + 19 * 3600 + 600, x=20),
        complaint("c2", T0 + 21 * 3600, x=-30, resolution=Resolution.VIOLATION_ISSUED),
        complaint("c3", T0 + 12 * 3600, category=ComplaintCategory.TRAFFIC, resolution=Resolution.OTHER),
        complaint("c4", T0 + 12 * 3600, x=500),  # outside focus area
    ]
    rep = study_report(store, {"s": GeoPoint(0, 0)}, cs, (T0, T0 + 86400), attribute=attribute)
    d = rep.to_dict()
    assert d["complaints_total"] == 3
    assert d["complaint_counts"]["AfterHoursConstruction"] == 2
    assert d["complaint_counts"]["Traffic"] == 1
    assert d["resolution_by_category"]["AfterHoursConstruction"] == {
        "ViolationNotObserved": 1, "ViolationIssued": 1, "Other": 0}
    assert d["event_counts_by_class"]["Jackhammer"] == 1
    assert d["event_counts_by_class"]["Siren"] == 1
    assert d["construction_events"] == 1
    assert d["evidence"] == {"after_hours_construction_complaints": 2, "with_evidence": 2, "fraction": 1.0}
    tables = rep.csv_tables()
    assert tables["complaint_counts.csv"].splitlines()[0] == "category,count"
    assert "AfterHoursConstruction,2" in tables["complaint_counts.csv"]
