"""Bullishness scoring backends.

The production backend wraps the pretrained crypto-domain sentiment
model (default ElKulako/cryptobert) through transformers and reports
the bullish-class probability. A tiny keyword backend is included for
fully offline smoke runs; it is not a substitute for the model.
"""

from __future__ import annotations

import logging
from typing import Protocol, Sequence

from .records import TextRecord

log = logging.getLogger(__name__)

DEFAULT_MODEL = "ElKulako/cryptobert"
LEXICON_BACKEND = "lexicon"


class Scorer(Protocol):
    def score(self, texts: Sequence[str]) -> list[float]:
        """Bullishness in [0, 1] per text, order-preserving."""


class CryptoBertScorer:
    """Deterministic (no-dropout) inference; bullish-class probability."""

    def __init__(self, model_name: str = DEFAULT_MODEL, cache_dir=None, max_length: int = 128):
        import torch
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        self._torch = torch
        self.max_length = max_length
        self.tokenizer = AutoTokenizer.from_pretrained(model_name, cache_dir=cache_dir)
        self.model = AutoModelForSequenceClassification.from_pretrained(
            model_name, cache_dir=cache_dir
        )
        self.model.eval()
        self._bullish_index = self._find_bullish_index()

    def _find_bullish_index(self) -> int:
        labels = getattr(self.model.config, "id2label", {}) or {}
        for idx, label in labels.items():
            if "bull" in str(label).lower():
                return int(idx)
        # fall back to the last class (positive-most by convention)
        return self.model.config.num_labels - 1

    def score(self, texts: Sequence[str]) -> list[float]:
        texts = list(texts)
        raw_lengths = self.tokenizer(texts, truncation=False)["input_ids"]
        for i, ids in enumerate(raw_lengths):
            if len(ids) > self.max_length:
                log.warning(
                    "text %d exceeds %d tokens (%d); truncating", i, self.max_length, len(ids)
                )
        batch = self.tokenizer(
            texts,
            truncation=True,
            max_length=self.max_length,
            padding=True,
            return_tensors="pt",
        )
        with self._torch.no_grad():
            logits = self.model(**batch).logits
            probs = self._torch.softmax(logits, dim=-1)
        return [float(p[self._bullish_index]) for p in probs]


BULLISH_WORDS = frozenset(
    "moon bull bullish buy buying pump rally surge up gain gains breakout ath long".split()
)
BEARISH_WORDS = frozenset(
    "crash bear bearish sell selling dump drop down loss losses plunge fear short rekt".split()
)


class LexiconScorer:
    """Keyword counter for offline smoke tests; crude by design."""

    def score(self, texts: Sequence[str]) -> list[float]:
        out = []
        for text in texts:
            words = [w.strip(".,!?:;()'\"").lower() for w in text.split()]
            pos = sum(w in BULLISH_WORDS for w in words)
            neg = sum(w in BEARISH_WORDS for w in words)
            if pos == neg:
                out.append(0.5)
            else:
                out.append(0.5 + 0.5 * (pos - neg) / (pos + neg))
        return out


def make_scorer(backend: str, cache_dir=None, max_length: int = 128) -> Scorer:
    if backend == LEXICON_BACKEND:
        return LexiconScorer()
    return CryptoBertScorer(backend, cache_dir=cache_dir, max_length=max_length)


def score_batch(
    records: Sequence[TextRecord], scorer: Scorer, batch_size: int = 16
) -> list[float]:
    """Score records in order, batching the underlying model calls."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    scores: list[float] = []
    texts = [r.text for r in records]
    for start in range(0, len(texts), batch_size):
        chunk = scorer.score(texts[start : start + batch_size])
        for s in chunk:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"scorer produced out-of-range score {s}")
        scores.extend(chunk)
    return scores
