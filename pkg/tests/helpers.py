"""Shared fixture builders for the test suite.

`synth_market` writes a synthetic OHLCV + sentiment CSV pair where the
next-day close change depends multiplicatively on one financial channel
(volumefrom) and one sentiment channel (news), so a fusion model that
captures the interaction has an edge over plain concatenation.
"""

import csv
import datetime as dt

import numpy as np


def synth_market(out_dir, n_days=240, seed=0, coupling=0.05, noise=0.002, smooth=1,
                 interaction="pointwise", start="2022-01-01"):
    """Write ohlcv.csv and sentiment.csv under out_dir; returns their paths.

    interaction="pointwise": next-day return ~ driver_t x centered news_t.
    interaction="weighted": the return follows a sentiment-softmax-weighted
    trailing average of the financial driver, i.e. sentiment decides which
    past financial values matter (products of the two channels again, but
    spread across the window).
    """
    rng = np.random.default_rng(seed)
    start_date = dt.date.fromisoformat(start)
    dates = [start_date + dt.timedelta(days=i) for i in range(n_days)]

    driver = rng.uniform(0.2, 1.0, size=n_days)  # financial signal, in volumefrom
    news = rng.uniform(0.0, 1.0, size=n_days)
    media = np.clip(news + rng.normal(0.0, 0.08, size=n_days), 0.0, 1.0)

    def signal(t):
        if interaction == "pointwise":
            lo = max(0, t - smooth + 1)
            return (driver[lo: t + 1].mean() - 0.6) * (news[lo: t + 1].mean() - 0.5) * 4.0
        lo = max(0, t - smooth + 1)
        w = np.exp(6.0 * news[lo: t + 1])
        w /= w.sum()
        return (float(w @ driver[lo: t + 1]) - 0.6) * 2.0

    close = np.empty(n_days)
    close[0] = 20_000.0
    for t in range(n_days - 1):
        ret = coupling * signal(t) + rng.normal(0.0, noise)
        close[t + 1] = close[t] * (1.0 + ret)

    opens = np.empty(n_days)
    opens[0] = close[0]
    opens[1:] = close[:-1]
    spread = rng.uniform(0.001, 0.01, size=n_days)
    high = np.maximum(opens, close) * (1.0 + spread)
    low = np.minimum(opens, close) * (1.0 - spread)
    volumefrom = driver * 10_000.0
    volumeto = volumefrom * close

    out_dir.mkdir(parents=True, exist_ok=True)
    ohlcv_path = out_dir / "ohlcv.csv"
    with ohlcv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "open", "high", "low", "close", "volumefrom", "volumeto"])
        for i, d in enumerate(dates):
            w.writerow(
                [d.isoformat(), repr(float(opens[i])), repr(float(high[i])), repr(float(low[i])),
                 repr(float(close[i])), repr(float(volumefrom[i])), repr(float(volumeto[i]))]
            )

    sentiment_path = out_dir / "sentiment.csv"
    with sentiment_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "news", "media"])
        for i, d in enumerate(dates):
            w.writerow([d.isoformat(), repr(float(news[i])), repr(float(media[i]))])

    return ohlcv_path, sentiment_path


def write_csv(path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path
