"""Input parsing: timestamped text records from JSON-lines or CSV."""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path

SOURCES = ("news", "media")


class RecordError(ValueError):
    """Malformed input record."""


@dataclass(frozen=True)
class TextRecord:
    day: dt.date
    source: str  # "news" or "media"
    text: str


def _parse_day(raw, where: str) -> dt.date:
    raw = str(raw).strip()
    for parser in (dt.date.fromisoformat, lambda s: dt.datetime.fromisoformat(s).date()):
        try:
            return parser(raw)
        except ValueError:
            continue
    try:
        return dt.datetime.fromtimestamp(float(raw), tz=dt.timezone.utc).date()
    except (ValueError, OSError, OverflowError):
        raise RecordError(f"{where}: cannot parse timestamp {raw!r} to a calendar day")


def _make_record(timestamp, source, text, where: str) -> TextRecord:
    source = str(source).strip().lower()
    if source not in SOURCES:
        raise RecordError(f"{where}: source must be one of {SOURCES}, got {source!r}")
    text = str(text)
    if not text.strip():
        raise RecordError(f"{where}: empty text")
    return TextRecord(day=_parse_day(timestamp, where), source=source, text=text)


def read_jsonl(path) -> list[TextRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise RecordError(f"{where}: invalid JSON ({err})")
            missing = {"timestamp", "source", "text"} - set(obj)
            if missing:
                raise RecordError(f"{where}: missing field(s) {sorted(missing)}")
            records.append(_make_record(obj["timestamp"], obj["source"], obj["text"], where))
    return records


def read_csv(path) -> list[TextRecord]:
    records = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {"timestamp", "source", "text"}
        if reader.fieldnames is None or expected - set(reader.fieldnames):
            raise RecordError(f"{path}: header must include {sorted(expected)}")
        for lineno, row in enumerate(reader, start=2):
            records.append(
                _make_record(row["timestamp"], row["source"], row["text"], f"{path}:{lineno}")
            )
    return records


def read_records(path, fmt: str | None = None) -> list[TextRecord]:
    """Load records, inferring the format from the suffix unless given."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if fmt == "jsonl":
        return read_jsonl(path)
    if fmt == "csv":
        return read_csv(path)
    raise RecordError(f"unknown input format {fmt!r} (use jsonl or csv)")
