"""Daily aggregation and the date,news,media CSV contract.

One row per day that has at least one scored record; the per-source
cell is the arithmetic mean of that day's scores, or empty when the
source has no records (the downstream pipeline imputes those). Output
is written atomically (temp file + rename).
"""

from __future__ import annotations

import csv
import datetime as dt
import os
import tempfile
from collections import defaultdict
from pathlib import Path
from statistics import fmean
from typing import Sequence

from .records import SOURCES, TextRecord

HEADER = ("date", "news", "media")


def aggregate_daily(
    records: Sequence[TextRecord], scores: Sequence[float]
) -> list[tuple[dt.date, float | None, float | None]]:
    """(day, news mean, media mean) rows sorted by day."""
    if len(records) != len(scores):
        raise ValueError(f"{len(records)} records but {len(scores)} scores")
    if not records:
        raise ValueError("nothing to aggregate")
    buckets: dict[dt.date, dict[str, list[float]]] = defaultdict(lambda: {s: [] for s in SOURCES})
    for record, score in zip(records, scores):
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score} outside [0,1]")
        buckets[record.day][record.source].append(score)
    rows = []
    for day in sorted(buckets):
        per_source = buckets[day]
        rows.append(
            (
                day,
                fmean(per_source["news"]) if per_source["news"] else None,
                fmean(per_source["media"]) if per_source["media"] else None,
            )
        )
    return rows


def write_sentiment_csv(path, rows: Sequence[tuple[dt.date, float | None, float | None]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HEADER)
            for day, news, media in rows:
                writer.writerow(
                    [
                        day.isoformat(),
                        "" if news is None else f"{news:.6f}",
                        "" if media is None else f"{media:.6f}",
                    ]
                )
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def indicator_passthrough(indicator_csv) -> list[tuple[dt.date, float | None, float | None]]:
    """Rescale a 0-100 market-indicator CSV (date,indicator) to news scores."""
    path = Path(indicator_csv)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"date", "indicator"} - set(reader.fieldnames):
            raise ValueError(f"{path}: header must include date,indicator")
        for lineno, row in enumerate(reader, start=2):
            day = dt.date.fromisoformat(row["date"].strip())
            value = float(row["indicator"])
            if not 0.0 <= value <= 100.0:
                raise ValueError(f"{path}:{lineno}: indicator {value} outside [0,100]")
            rows.append((day, value / 100.0, None))
    rows.sort(key=lambda r: r[0])
    return rows
