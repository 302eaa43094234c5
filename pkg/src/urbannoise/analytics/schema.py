"""Frozen JSON schema for the study report."""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

import jsonschema

SCHEMA_PATH = Path(__file__).resolve().parent.parent / "data" / "study_report.schema.json"


@lru_cache(maxsize=1)
def report_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text())


def validate_report(doc: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` does not match the frozen schema."""
    jsonschema.validate(doc, report_schema(), cls=jsonschema.Draft202012Validator)
