"""Noise-complaint validation analytics over the time lattice."""

from .detect import (
    AnalysisConfig,
    BackgroundSeries,
    DetectedEvent,
    background,
    detect_events,
    event_is_sound,
    exceedance_runs,
    simulation_attributor,
)
from .schema import report_schema, validate_report
from .study import (
    FocusArea,
    StudyReport,
    after_hours,
    build_focus_area,
    complaints_to_csv,
    evidence_window,
    filter_complaints,
    match_evidence,
    read_complaints_csv,
    sensor_activity,
    study_report,
)

__all__ = [
    "report_schema",
    "validate_report",
    "AnalysisConfig",
    "BackgroundSeries",
    "DetectedEvent",
    "FocusArea",
    "StudyReport",
    "after_hours",
    "background",
    "build_focus_area",
    "complaints_to_csv",
    "detect_events",
    "event_is_sound",
    "evidence_window",
    "exceedance_runs",
    "filter_complaints",
    "match_evidence",
    "read_complaints_csv",
    "sensor_activity",
    "simulation_attributor",
    "study_report",
]
