"""Run configuration: strict JSON with ``scenario``, ``server`` and ``analysis`` sections."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .analytics import AnalysisConfig
from .ingest.protocol import DEFAULT_PORT
from .ingest.service import DEDUP_WINDOW

# section -> key -> (default, accepted types, help)
DEFAULTS = {
    "scenario": {
        "spec": (None, (str, type(None)), "scenario spec path; null or \"demo\" uses the bundled demo"),
        "snippet_rate_per_hour": (None, (int, float, type(None)), "override the scenario's snippet rate"),
    },
    "server": {
        "host": ("127.0.0.1", (str,), "listen address"),
        "port": (DEFAULT_PORT, (int,), "TCP port"),
        "key": ("urbannoise-demo-key", (str,), "shared key expected in hello"),
        "log": ("ingest.ndjson", (str,), "append-only ingest log path"),
        "fsync": (False, (bool,), "fsync the log before every ack"),
        "dedup_window": (DEDUP_WINDOW, (int,), "out-of-order sequence window per sensor"),
    },
    "analysis": {
        "resolution_s": (300, (int,), "analysis span length: 60, 300 or 3600"),
        "window_s": (7200, (int,), "trailing background window"),
        "min_coverage": (0.25, (int, float), "fraction of window spans that must hold data"),
        "margin_db": (10.0, (int, float), "exceedance margin above background"),
        "radius_m": (100.0, (int, float), "focus-area radius around each sensor"),
        "tz_offset_s": (None, (int, type(None)), "local time offset; null takes the scenario's"),
        "after_hours": (["18:00", "07:00"], (list,), "restricted window [start, end) local time"),
        "dedup_radius_m": (10.0, (int, float), "complaint dedup distance"),
        "dedup_window_s": (1800, (int,), "complaint dedup time window"),
    },
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _hhmm(path: str, s) -> int:
    try:
        hh, mm = str(s).split(":")
        sec = int(hh) * 3600 + int(mm) * 60
    except ValueError:
        raise ConfigError(path, f"expected HH:MM, got {s!r}") from None
    if not 0 <= sec <= 86_400:
        raise ConfigError(path, f"time of day out of range: {s!r}")
    return sec % 86_400


@dataclass(frozen=True)
class Config:
    values: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def hash(self) -> str:
        """SHA-256 of the canonical JSON of the resolved configuration."""
        canon = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def analysis(self, scenario_tz: int = 0) -> AnalysisConfig:
        a = self.values["analysis"]
        start, end = a["after_hours"]
        tz = a["tz_offset_s"]
        try:
            return AnalysisConfig(
                resolution=a["resolution_s"],
                window=a["window_s"],
                min_coverage=float(a["min_coverage"]),
                margin_db=float(a["margin_db"]),
                radius=float(a["radius_m"]),
                tz_offset=scenario_tz if tz is None else tz,
                after_hours_start=_hhmm("analysis.after_hours[0]", start),
                after_hours_end=_hhmm("analysis.after_hours[1]", end),
                dedup_radius=float(a["dedup_radius_m"]),
                dedup_window=a["dedup_window_s"],
            )
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError("analysis", str(e)) from None


def config_from_dict(doc: dict) -> Config:
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "expected an object")
    for section in doc:
        if section not in DEFAULTS:
            raise ConfigError(section, "unknown section")
    values = {}
    for section, fields in DEFAULTS.items():
        given = doc.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(section, "expected an object")
        for key in given:
            if key not in fields:
                raise ConfigError(f"{section}.{key}", "unknown key")
        out = {}
        for key, (default, types, _) in fields.items():
            v = given.get(key, default)
            if isinstance(v, bool) and bool not in types:
                raise ConfigError(f"{section}.{key}", "wrong type")
            if not isinstance(v, types):
                raise ConfigError(f"{section}.{key}", f"expected {' or '.join(t.__name__ for t in types)}")
            out[key] = v
        values[section] = out
    if len(values["analysis"]["after_hours"]) != 2:
        raise ConfigError("analysis.after_hours", "expected [start, end]")
    cfg = Config(values)
    cfg.analysis()
    return cfg


def load_config(path=None) -> Config:
    if path is None:
        return config_from_dict({})
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("<document>", f"invalid JSON: {e}") from None
    return config_from_dict(doc)


def defaults_help() -> str:
    lines = ["config defaults:"]
    for section, fields in DEFAULTS.items():
        for key, (default, _, text) in fields.items():
            lines.append(f"  {section}.{key} = {json.dumps(default)}  ({text})")
    return "\n".join(lines)
