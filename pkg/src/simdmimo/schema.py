"""Versioned JSON schemas for the report files."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

SCHEMA_FILES = {
    "sim": "sim_report.schema.json",
    "compare-precision": "compare_report.schema.json",
    "bench": "bench_report.schema.json",
}


@lru_cache(maxsize=None)
def load_schema(kind: str) -> dict:
    if kind not in SCHEMA_FILES:
        raise ValueError(f"no schema for report kind {kind!r}")
    text = (resources.files("simdmimo") / "schemas" / SCHEMA_FILES[kind]).read_text()
    return json.loads(text)


def validate_document(doc: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` does not match its declared kind."""
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind not in SCHEMA_FILES:
        raise jsonschema.ValidationError(f"unknown or missing report kind {kind!r}")
    jsonschema.validate(doc, load_schema(kind))
