"""Data ingestion and preprocessing for daily OHLCV + sentiment series.

The pipeline is: load (or fetch) CSVs -> align on the market calendar
with neutral imputation of missing sentiment -> optional
stationarization (first-order percentage differences of the price
columns) -> min-max scaling fitted on the training slice -> sliding
windows -> chronological train/validation split (validation = samples
whose target falls in the final 70 calendar days).

Everything here is pure and deterministic: same files + options give a
byte-identical window set and fingerprint.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .errors import DataError, EnvError, MissingInputError, NetworkError, StateError
from .stats import pearson_r

log = logging.getLogger(__name__)

OHLCV_COLUMNS = ("date", "open", "high", "low", "close", "volumefrom", "volumeto")
SENTIMENT_COLUMNS = ("date", "news", "media")
FIN_FEATURES = ("open", "high", "low", "volumefrom")
SENT_FEATURES = ("news", "media")
PRICE_COLUMNS = ("open", "high", "low")  # stationarized alongside the close target
NEUTRAL_SENTIMENT = 0.5
DEFAULT_VAL_DAYS = 70
DEFAULT_SCREEN_THRESHOLD = 0.3


@dataclass
class RawFrame:
    """Parsed CSV: strictly increasing daily dates plus value columns."""

    dates: list[dt.date]
    columns: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.dates)


@dataclass
class ModalSeries:
    """Aligned multivariate series for both modalities plus the target.

    `raw_close` keeps the actual USD close per row even when the target
    has been stationarized, so predictions can be mapped back to price
    space.
    """

    dates: list[dt.date]
    fin: np.ndarray  # (T, 4): open, high, low, volumefrom
    sent: np.ndarray  # (T, 2): news, media
    target: np.ndarray  # (T,) close in the current representation
    raw_close: np.ndarray  # (T,) close in USD
    n_imputed: int = 0

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(d.isoformat() for d in self.dates).encode())
        for arr in (self.fin, self.sent, self.target, self.raw_close):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class WindowSample:
    """One training example: L contiguous rows per modality, next-step target.

    `anchor_close` is the USD close of the last observed day, used to
    rebuild a price from a predicted percentage change and as the
    persistence-baseline forecast.
    """

    fin_win: np.ndarray
    sent_win: np.ndarray
    target_next: float
    anchor_close: float
    target_date: dt.date


# --------------------------------------------------------------------------
# CSV loading
# --------------------------------------------------------------------------


def _parse_date(raw: str, row: int) -> dt.date:
    try:
        return dt.datetime.strptime(raw, "%Y-%m-%d").date()
    except ValueError:
        raise DataError(f"row {row}, column 'date': could not parse {raw!r} as YYYY-MM-DD")


def _parse_float(raw: str, row: int, column: str, allow_empty: bool = False) -> float:
    if raw == "" and allow_empty:
        return float("nan")
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"row {row}, column {column!r}: could not parse {raw!r}")
    if raw != "" and not np.isfinite(value):
        raise DataError(f"row {row}, column {column!r}: non-finite value {raw!r}")
    return value


def _validate_ohlcv_row(row_idx: int, date: dt.date, values: dict[str, float]) -> None:
    for col in ("open", "high", "low", "close", "volumefrom", "volumeto"):
        if values[col] < 0:
            raise DataError(f"row {row_idx} ({date}): negative {col} {values[col]}")
    lo, hi = values["low"], values["high"]
    body_lo = min(values["open"], values["close"])
    body_hi = max(values["open"], values["close"])
    if not (lo <= body_lo <= body_hi <= hi):
        raise DataError(
            f"row {row_idx} ({date}): OHLC ordering violated "
            f"(low {lo}, open {values['open']}, close {values['close']}, high {hi})"
        )


def load_csv(path, schema: str) -> RawFrame:
    """Parse an `ohlcv` or `sentiment` CSV with an exact header contract.

    Rows are returned date-sorted; duplicate dates are rejected. Empty
    cells are only legal for sentiment scores (missing -> NaN, imputed
    later).
    """
    if schema not in ("ohlcv", "sentiment"):
        raise DataError(f"unknown CSV schema {schema!r}")
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"no such file: {path}")
    expected = OHLCV_COLUMNS if schema == "ohlcv" else SENTIMENT_COLUMNS

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        if tuple(h.strip() for h in header) != expected:
            missing = [c for c in expected if c not in header]
            raise DataError(
                f"{path}: header mismatch, expected {','.join(expected)}; "
                f"missing column(s) {missing}" if missing
                else f"{path}: header mismatch, expected {','.join(expected)}, got {','.join(header)}"
            )
        rows = []
        for row_idx, row in enumerate(reader, start=2):
            if not row or all(cell == "" for cell in row):
                continue
            if len(row) != len(expected):
                raise DataError(f"row {row_idx}: expected {len(expected)} cells, got {len(row)}")
            date = _parse_date(row[0], row_idx)
            values = {}
            for col, cell in zip(expected[1:], row[1:]):
                values[col] = _parse_float(cell, row_idx, col, allow_empty=(schema == "sentiment"))
            if schema == "ohlcv":
                _validate_ohlcv_row(row_idx, date, values)
            else:
                for col in SENT_FEATURES:
                    v = values[col]
                    if not np.isnan(v) and not 0.0 <= v <= 1.0:
                        raise DataError(f"row {row_idx} ({date}): {col} score {v} outside [0,1]")
            rows.append((date, values))

    rows.sort(key=lambda r: r[0])
    seen: set[dt.date] = set()
    for date, _ in rows:
        if date in seen:
            raise DataError(f"duplicate date {date.isoformat()} in {path}")
        seen.add(date)

    dates = [r[0] for r in rows]
    columns = {
        col: np.array([r[1][col] for r in rows], dtype=np.float64) for col in expected[1:]
    }
    return RawFrame(dates=dates, columns=columns)


def write_ohlcv_csv(path, frame: RawFrame) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OHLCV_COLUMNS)
        for i, date in enumerate(frame.dates):
            writer.writerow(
                [date.isoformat()] + [repr(float(frame.columns[c][i])) for c in OHLCV_COLUMNS[1:]]
            )


# --------------------------------------------------------------------------
# HTTP fetch with CSV cache
# --------------------------------------------------------------------------


def _bars_from_payload(payload) -> list[dict]:
    if isinstance(payload, dict):  # provider envelope, unwrap Data/Data
        inner = payload.get("Data")
        if isinstance(inner, dict):
            inner = inner.get("Data")
        payload = inner
    if not isinstance(payload, list):
        raise NetworkError("malformed payload: expected a JSON array of daily bars")
    return payload


def fetch_ohlcv(
    endpoint_url: str,
    symbol: str,
    start_date: dt.date,
    end_date: dt.date,
    api_key_env: str,
    cache_dir="cache",
    *,
    max_attempts: int = 3,
    backoff_s: float = 1.0,
    timeout_s: float = 30.0,
) -> RawFrame:
    """Fetch daily bars for [start_date, end_date], caching to CSV.

    If the cache file already exists no request is made, so fully
    offline runs work from a warm cache.
    """
    if start_date > end_date:
        raise DataError(f"start date {start_date} is after end date {end_date}")
    cache_path = (
        Path(cache_dir) / symbol / f"{start_date.isoformat()}_{end_date.isoformat()}.csv"
    )
    if cache_path.exists():
        log.info("using cached bars at %s", cache_path)
        return load_csv(cache_path, "ohlcv")

    api_key = os.environ.get(api_key_env)
    if not api_key:
        raise EnvError(f"API key environment variable {api_key_env!r} is not set")

    to_ts = int(
        dt.datetime.combine(end_date, dt.time(0), tzinfo=dt.timezone.utc).timestamp()
    )
    params = {
        "fsym": symbol,
        "tsym": "USD",
        "toTs": to_ts,
        "limit": (end_date - start_date).days,
        "api_key": api_key,
    }
    last_err: Exception | None = None
    payload = None
    for attempt in range(max_attempts):
        try:
            resp = requests.get(endpoint_url, params=params, timeout=timeout_s)
            if resp.status_code != 200:
                raise NetworkError(f"HTTP {resp.status_code} from {endpoint_url}")
            payload = resp.json()
            break
        except (requests.RequestException, ValueError, NetworkError) as err:
            last_err = err
            if attempt + 1 < max_attempts:
                time.sleep(backoff_s * (2**attempt))
    else:
        raise NetworkError(f"fetch failed after {max_attempts} attempts: {last_err}")

    bars = _bars_from_payload(payload)
    rows: list[tuple[dt.date, dict]] = []
    for bar in bars:
        try:
            date = dt.datetime.fromtimestamp(int(bar["time"]), tz=dt.timezone.utc).date()
            values = {col: float(bar[col]) for col in OHLCV_COLUMNS[1:]}
        except (KeyError, TypeError, ValueError) as err:
            raise NetworkError(f"malformed payload bar {bar!r}: {err}")
        if start_date <= date <= end_date:
            rows.append((date, values))
    if not rows:
        raise NetworkError(
            f"payload contained no daily bars between {start_date} and {end_date}"
        )
    rows.sort(key=lambda r: r[0])
    frame = RawFrame(
        dates=[r[0] for r in rows],
        columns={
            col: np.array([r[1][col] for r in rows], dtype=np.float64)
            for col in OHLCV_COLUMNS[1:]
        },
    )
    write_ohlcv_csv(cache_path, frame)
    return load_csv(cache_path, "ohlcv")  # re-read so cache and return value agree


# --------------------------------------------------------------------------
# alignment, stationarization, scaling
# --------------------------------------------------------------------------


def neutral_sentiment_frame(dates: list[dt.date]) -> RawFrame:
    """All-neutral sentiment for financial-only runs."""
    n = len(dates)
    return RawFrame(
        dates=list(dates),
        columns={c: np.full(n, NEUTRAL_SENTIMENT) for c in SENT_FEATURES},
    )


def align_and_impute(ohlcv: RawFrame, sentiment: RawFrame) -> ModalSeries:
    """Join sentiment onto the OHLCV calendar, imputing neutral 0.5.

    Missing days and missing individual scores both impute to 0.5; the
    imputed-cell count is kept on the result and logged.
    """
    if not set(ohlcv.dates) & set(sentiment.dates):
        raise DataError("OHLCV and sentiment date ranges do not intersect")
    sent_by_date = {
        d: (sentiment.columns["news"][i], sentiment.columns["media"][i])
        for i, d in enumerate(sentiment.dates)
    }
    t = len(ohlcv.dates)
    sent = np.full((t, 2), np.nan)
    for i, d in enumerate(ohlcv.dates):
        if d in sent_by_date:
            sent[i] = sent_by_date[d]
    n_imputed = int(np.isnan(sent).sum())
    sent = np.where(np.isnan(sent), NEUTRAL_SENTIMENT, sent)
    if n_imputed:
        log.info("imputed %d missing sentiment cells with %.1f", n_imputed, NEUTRAL_SENTIMENT)

    fin = np.column_stack([ohlcv.columns[c] for c in FIN_FEATURES])
    close = ohlcv.columns["close"].copy()
    return ModalSeries(
        dates=list(ohlcv.dates),
        fin=fin,
        sent=sent,
        target=close,
        raw_close=close.copy(),
        n_imputed=n_imputed,
    )


def pct_diff(series: np.ndarray) -> np.ndarray:
    """First-order percentage differences d_t = (p_{t+1} - p_t) / p_t."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1:
        raise DataError(f"pct_diff needs a vector, got shape {series.shape}")
    if (series <= 0).any():
        bad = int(np.argmax(series <= 0))
        raise DataError(f"pct_diff needs positive prices, got {series[bad]} at index {bad}")
    return np.diff(series) / series[:-1]


def inverse_pct_diff(anchor: float, diffs: np.ndarray) -> np.ndarray:
    """Rebuild the price path [anchor, anchor*(1+d_0), ...]."""
    anchor = float(anchor)
    if anchor <= 0:
        raise DataError(f"anchor price must be positive, got {anchor}")
    diffs = np.asarray(diffs, dtype=np.float64)
    if (diffs <= -1).any():
        raise DataError("percentage difference <= -1 would produce a non-positive price")
    return anchor * np.concatenate([[1.0], np.cumprod(1.0 + diffs)])


def stationarize(ms: ModalSeries) -> ModalSeries:
    """Replace price columns and target with percentage differences.

    Row t of the result describes the change realized on date t+1; the
    non-differenced columns (volume, sentiment) take that date's levels.
    """
    fin_idx = {name: i for i, name in enumerate(FIN_FEATURES)}
    fin = ms.fin[1:].copy()
    for name in PRICE_COLUMNS:
        fin[:, fin_idx[name]] = pct_diff(ms.fin[:, fin_idx[name]])
    return ModalSeries(
        dates=ms.dates[1:],
        fin=fin,
        sent=ms.sent[1:].copy(),
        target=pct_diff(ms.target),
        raw_close=ms.raw_close[1:].copy(),
        n_imputed=ms.n_imputed,
    )


class MinMaxScaler:
    """Per-column x' = (x - min) / (max - min) with exact inversion.

    A constant column maps to 0.0 (with a warning) and inverts back to
    its constant.
    """

    def __init__(self):
        self.col_min: np.ndarray | None = None
        self.col_max: np.ndarray | None = None

    def fit(self, x) -> "MinMaxScaler":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if len(x) < 2:
            raise DataError(f"scaler fit needs at least 2 rows, got {len(x)}")
        self.col_min = x.min(axis=0)
        self.col_max = x.max(axis=0)
        constant = self.col_max == self.col_min
        if constant.any():
            log.warning("constant column(s) %s scale to 0.0", np.flatnonzero(constant).tolist())
        return self

    def _checked(self, x) -> np.ndarray:
        if self.col_min is None:
            raise StateError("scaler used before fit")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(self.col_min):
            raise DataError(
                f"scaler fitted on {len(self.col_min)} column(s) cannot handle shape {x.shape}"
            )
        return x

    def _denom(self) -> np.ndarray:
        span = self.col_max - self.col_min
        return np.where(span == 0.0, 1.0, span)

    def transform(self, x) -> np.ndarray:
        return (self._checked(x) - self.col_min) / self._denom()

    def invert(self, x) -> np.ndarray:
        return self._checked(x) * self._denom() + self.col_min

    def state(self) -> dict:
        if self.col_min is None:
            raise StateError("scaler used before fit")
        return {"min": self.col_min.tolist(), "max": self.col_max.tolist()}


# --------------------------------------------------------------------------
# windows and split
# --------------------------------------------------------------------------


def make_windows(ms: ModalSeries, window: int) -> list[WindowSample]:
    """All T - L contiguous windows; sample i covers rows [i, i+L)."""
    t = len(ms.dates)
    if t <= window:
        raise DataError(f"need more than {window} rows to build windows, got {t}")
    samples = []
    for i in range(t - window):
        end = i + window
        samples.append(
            WindowSample(
                fin_win=ms.fin[i:end].copy(),
                sent_win=ms.sent[i:end].copy(),
                target_next=float(ms.target[end]),
                anchor_close=float(ms.raw_close[end - 1]),
                target_date=ms.dates[end],
            )
        )
    return samples


def split_train_val(
    samples: list[WindowSample], val_days: int = DEFAULT_VAL_DAYS
) -> tuple[list[WindowSample], list[WindowSample]]:
    """Validation = samples whose target date falls in the final `val_days`
    calendar days; training samples never have targets in that span."""
    if len(samples) < val_days + 1:
        raise DataError(f"need at least {val_days + 1} samples to split, got {len(samples)}")
    last = max(s.target_date for s in samples)
    cutoff = last - dt.timedelta(days=val_days - 1)
    train = [s for s in samples if s.target_date < cutoff]
    val = [s for s in samples if s.target_date >= cutoff]
    if not train:
        raise DataError("no training samples left of the validation window")
    return train, val


def correlation_screen(ms: ModalSeries, threshold: float) -> list[str]:
    """Financial features whose |corr(feature, close)| meets the threshold.

    The default pipeline keeps the pinned feature set regardless and
    uses this only as a reported diagnostic.
    """
    if not 0.0 <= threshold <= 1.0:
        raise DataError(f"screen threshold must be in [0,1], got {threshold}")
    selected = []
    for i, name in enumerate(FIN_FEATURES):
        if abs(_corr_or_zero(ms.fin[:, i], ms.target)) >= threshold:
            selected.append(name)
    return selected


def _corr_or_zero(x, y) -> float:
    try:
        return float(pearson_r(x, y))
    except DataError:
        return 0.0  # constant column, no linear association to report


def feature_correlations(ms: ModalSeries) -> dict[str, float]:
    """Diagnostic r of every feature against the close target."""
    out = {}
    for i, name in enumerate(FIN_FEATURES):
        out[name] = _corr_or_zero(ms.fin[:, i], ms.target)
    for i, name in enumerate(SENT_FEATURES):
        out[name] = _corr_or_zero(ms.sent[:, i], ms.target)
    return out


# --------------------------------------------------------------------------
# end-to-end preparation
# --------------------------------------------------------------------------


@dataclass
class PreparedData:
    train: list[WindowSample]
    val: list[WindowSample]
    feature_scaler: MinMaxScaler
    target_scaler: MinMaxScaler
    stationary: bool
    window: int
    scale_scope: str
    fingerprint: str
    n_imputed: int
    screen: dict[str, float]


def prepare_dataset(
    ohlcv_csv,
    sentiment_csv=None,
    *,
    stationary: bool = False,
    window: int = 30,
    scale_scope: str = "train",
    val_days: int = DEFAULT_VAL_DAYS,
    screen_threshold: float = DEFAULT_SCREEN_THRESHOLD,
) -> PreparedData:
    """Run the full preprocessing pipeline on CSV inputs."""
    if scale_scope not in ("train", "all"):
        raise DataError(f"scale_scope must be 'train' or 'all', got {scale_scope!r}")
    ohlcv = load_csv(ohlcv_csv, "ohlcv")
    sentiment = (
        load_csv(sentiment_csv, "sentiment")
        if sentiment_csv is not None
        else neutral_sentiment_frame(ohlcv.dates)
    )
    ms = align_and_impute(ohlcv, sentiment)
    fingerprint = ms.fingerprint()
    screen = feature_correlations(ms)
    kept = correlation_screen(ms, screen_threshold)
    log.info("correlation screen at %.2f keeps %s (pinned set used)", screen_threshold, kept)

    if stationary:
        ms = stationarize(ms)

    cutoff = ms.dates[-1] - dt.timedelta(days=val_days - 1)
    fit_rows = [i for i, d in enumerate(ms.dates) if d < cutoff] if scale_scope == "train" else list(range(len(ms.dates)))
    if len(fit_rows) < 2:
        raise DataError("not enough pre-validation rows to fit the scaler")

    features = np.column_stack([ms.fin, ms.sent])
    feature_scaler = MinMaxScaler().fit(features[fit_rows])
    target_scaler = MinMaxScaler().fit(ms.target[fit_rows, None])
    scaled_features = feature_scaler.transform(features)
    scaled = ModalSeries(
        dates=ms.dates,
        fin=scaled_features[:, : len(FIN_FEATURES)],
        sent=scaled_features[:, len(FIN_FEATURES):],
        target=target_scaler.transform(ms.target[:, None])[:, 0],
        raw_close=ms.raw_close,
        n_imputed=ms.n_imputed,
    )
    samples = make_windows(scaled, window)
    train, val = split_train_val(samples, val_days)
    return PreparedData(
        train=train,
        val=val,
        feature_scaler=feature_scaler,
        target_scaler=target_scaler,
        stationary=stationary,
        window=window,
        scale_scope=scale_scope,
        fingerprint=fingerprint,
        n_imputed=ms.n_imputed,
        screen=screen,
    )
