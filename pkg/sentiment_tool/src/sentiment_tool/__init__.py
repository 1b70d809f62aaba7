"""Batch sentiment scoring for crypto text, emitting daily date,news,media CSVs."""

from .aggregate import aggregate_daily, indicator_passthrough, write_sentiment_csv
from .records import TextRecord, read_records
from .scoring import CryptoBertScorer, LexiconScorer, make_scorer, score_batch

__version__ = "0.1.0"

__all__ = [
    "CryptoBertScorer",
    "LexiconScorer",
    "TextRecord",
    "aggregate_daily",
    "indicator_passthrough",
    "make_scorer",
    "read_records",
    "score_batch",
    "write_sentiment_csv",
    "__version__",
]
