"""Background estimation and exceedance-event detection over lattice series.

The analysis grid is a fixed lattice resolution (5 minutes by default). For
every span, the background is the arithmetic mean of the span means in the
trailing window that ends where the span begins; a span is an exceedance
when its mean is at least ``margin`` above that background. Events are the
maximal runs of consecutive exceedance spans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import SourceClass, db_to_mdb, round_div
from ..lattice import LatticeLevel, LatticeStore, Stat

_RESOLUTION_LEVELS = {60: LatticeLevel.MINUTE, 300: LatticeLevel.FIVE_MINUTE, 3600: LatticeLevel.HOUR}


@dataclass(frozen=True)
class AnalysisConfig:
    resolution: int = 300
    window: int = 7200
    min_coverage: float = 0.25
    margin_db: float = 10.0
    radius: float = 100.0
    tz_offset: int = 0
    after_hours_start: int = 18 * 3600
    after_hours_end: int = 7 * 3600
    dedup_radius: float = 10.0
    dedup_window: int = 1800

    def __post_init__(self):
        if self.resolution not in _RESOLUTION_LEVELS:
            raise ValueError(f"resolution must be one of {sorted(_RESOLUTION_LEVELS)} seconds")
        if self.window <= 0 or self.window % self.resolution:
            raise ValueError("window must be a positive multiple of resolution")
        if not 0 < self.min_coverage <= 1:
            raise ValueError("min_coverage must be in (0, 1]")
        if self.radius < 0 or self.dedup_radius < 0 or self.dedup_window < 0:
            raise ValueError("radii and windows must be non-negative")

    @property
    def level(self) -> LatticeLevel:
        return _RESOLUTION_LEVELS[self.resolution]

    @property
    def window_spans(self) -> int:
        return self.window // self.resolution

    @property
    def min_spans(self) -> int:
        return max(1, math.ceil(self.min_coverage * self.window_spans - 1e-9))

    @property
    def margin(self) -> int:
        return db_to_mdb(self.margin_db)


@dataclass(frozen=True)
class BackgroundSeries:
    """Span-aligned analysis series: span means and trailing backgrounds (mdB, None = gap)."""

    sensor: str
    starts: tuple[int, ...]
    levels: tuple[int | None, ...]
    background: tuple[int | None, ...]
    resolution: int

    def threshold(self, margin: int) -> list[int | None]:
        return [None if b is None else b + margin for b in self.background]


@dataclass(frozen=True)
class DetectedEvent:
    sensor: str
    start: int
    end: int
    peak: int
    peak_time: int
    background_at_peak: int
    attributed: SourceClass = SourceClass.UNKNOWN
    spans: int = 1

    def overlaps(self, a: int, b: int) -> bool:
        return self.start < b and a < self.end


def _align(start: int, end: int, res: int) -> tuple[int, int]:
    return start - start % res, end + (-end) % res


def background(store: LatticeStore, sensor: str, start: int, end: int, cfg: AnalysisConfig | None = None) -> BackgroundSeries:
    """Trailing-window background for each analysis span in ``[start, end)``.

    The window for a span starting at ``t`` covers ``[t - window, t)``; the
    span itself never contributes. Spans with fewer than ``min_coverage`` of
    the window holding data are gaps.
    """
    cfg = cfg or AnalysisConfig()
    res = cfg.resolution
    start, end = _align(start, end, res)
    n_win = cfg.window_spans
    pts = store.series(sensor, start - cfg.window, end, cfg.level, Stat.MEAN_DB)
    means = [p.value for p in pts]
    vals = np.array([0 if m is None else m for m in means], dtype=np.int64)
    have = np.array([m is not None for m in means], dtype=np.int64)
    csum = np.concatenate(([0], np.cumsum(vals)))
    ccnt = np.concatenate(([0], np.cumsum(have)))
    bgs = []
    for i in range(n_win, len(means)):
        n = int(ccnt[i] - ccnt[i - n_win])
        if n < cfg.min_spans:
            bgs.append(None)
        else:
            bgs.append(round_div(int(csum[i] - csum[i - n_win]), n))
    return BackgroundSeries(
        sensor=sensor,
        starts=tuple(p.start for p in pts[n_win:]),
        levels=tuple(means[n_win:]),
        background=tuple(bgs),
        resolution=res,
    )


def exceedance_runs(levels, backgrounds, margin: int) -> list[tuple[int, int]]:
    """Half-open index ranges of maximal runs with ``level >= background + margin``."""
    runs = []
    run_start = None
    for i, (lv, bg) in enumerate(zip(levels, backgrounds)):
        hit = lv is not None and bg is not None and lv >= bg + margin
        if hit and run_start is None:
            run_start = i
        elif not hit and run_start is not None:
            runs.append((run_start, i))
            run_start = None
    if run_start is not None:
        runs.append((run_start, len(levels)))
    return runs


def detect_events(
    store: LatticeStore,
    sensor: str,
    start: int,
    end: int,
    cfg: AnalysisConfig | None = None,
    attribute=None,
) -> list[DetectedEvent]:
    """Potential violation events for one sensor.

    ``attribute(sensor, span_start, span_end)`` names the source of the peak
    span; without it every event is attributed ``Unknown``.
    """
    cfg = cfg or AnalysisConfig()
    bg = background(store, sensor, start, end, cfg)
    out = []
    for a, b in exceedance_runs(bg.levels, bg.background, cfg.margin):
        peak_i = max(range(a, b), key=lambda i: (bg.levels[i], -i))
        peak_t = bg.starts[peak_i]
        cls = SourceClass.UNKNOWN
        if attribute is not None:
            cls = attribute(sensor, peak_t, peak_t + bg.resolution)
        out.append(
            DetectedEvent(
                sensor=sensor,
                start=bg.starts[a],
                end=bg.starts[b - 1] + bg.resolution,
                peak=bg.levels[peak_i],
                peak_time=peak_t,
                background_at_peak=bg.background[peak_i],
                attributed=cls,
                spans=b - a,
            )
        )
    return out


def event_is_sound(store: LatticeStore, event: DetectedEvent, cfg: AnalysisConfig | None = None) -> bool:
    """Recheck from the lattice that every span of ``event`` clears its threshold."""
    cfg = cfg or AnalysisConfig()
    bg = background(store, event.sensor, event.start, event.end, cfg)
    return all(
        lv is not None and b is not None and lv >= b + cfg.margin
        for lv, b in zip(bg.levels, bg.background)
    )


def simulation_attributor(spec, timeline):
    """Attribution from simulator ground truth: dominant source energy in the span."""
    from ..soundscape import dominant_source_over

    sensors = {s.id: s for s in spec.sensors}

    def attribute(sensor: str, t0: int, t1: int) -> SourceClass:
        s = sensors.get(sensor)
        if s is None:
            return SourceClass.UNKNOWN
        return dominant_source_over(s, t0, t1, timeline)

    return attribute
