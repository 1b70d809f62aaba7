import datetime as dt
import http.server
import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from damcast import datapipe as dp
from damcast.errors import DataError, EnvError, MissingInputError, NetworkError, StateError

from helpers import synth_market, write_csv

OHLCV_HEADER = ["date", "open", "high", "low", "close", "volumefrom", "volumeto"]
SENT_HEADER = ["date", "news", "media"]

GOLDEN_OHLCV = [
    ["2023-01-01", "100.0", "110.0", "95.0", "105.0", "1000.0", "105000.0"],
    ["2023-01-02", "105.0", "112.0", "101.0", "102.0", "1100.0", "112200.0"],
    ["2023-01-03", "102.0", "108.0", "99.0", "107.0", "900.0", "96300.0"],
]
GOLDEN_SENT = [
    ["2023-01-01", "0.6", "0.4"],
    ["2023-01-02", "0.7", "0.5"],
    ["2023-01-03", "0.2", "0.9"],
]


class TestLoadCsv:
    def test_golden_fixture(self, tmp_path):
        path = write_csv(tmp_path / "o.csv", OHLCV_HEADER, GOLDEN_OHLCV)
        frame = dp.load_csv(path, "ohlcv")
        assert len(frame) == 3
        assert frame.dates == [dt.date(2023, 1, d) for d in (1, 2, 3)]
        assert frame.columns["close"].tolist() == [105.0, 102.0, 107.0]

    def test_duplicate_date_named_in_error(self, tmp_path):
        rows = GOLDEN_OHLCV + [GOLDEN_OHLCV[1]]
        path = write_csv(tmp_path / "o.csv", OHLCV_HEADER, rows)
        with pytest.raises(DataError, match="2023-01-02"):
            dp.load_csv(path, "ohlcv")

    def test_shuffled_rows_sort_identically(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", OHLCV_HEADER, GOLDEN_OHLCV)
        b = write_csv(tmp_path / "b.csv", OHLCV_HEADER, GOLDEN_OHLCV[::-1])
        fa, fb = dp.load_csv(a, "ohlcv"), dp.load_csv(b, "ohlcv")
        assert fa.dates == fb.dates
        for col in fa.columns:
            np.testing.assert_array_equal(fa.columns[col], fb.columns[col])

    def test_missing_column_in_header(self, tmp_path):
        path = write_csv(tmp_path / "o.csv", OHLCV_HEADER[:-1], [r[:-1] for r in GOLDEN_OHLCV])
        with pytest.raises(DataError, match="volumeto"):
            dp.load_csv(path, "ohlcv")

    def test_unparseable_value_names_row_and_column(self, tmp_path):
        rows = [r.copy() for r in GOLDEN_OHLCV]
        rows[1][3] = "oops"
        path = write_csv(tmp_path / "o.csv", OHLCV_HEADER, rows)
        with pytest.raises(DataError, match=r"row 3.*'low'"):
            dp.load_csv(path, "ohlcv")

    def test_ohlc_ordering_enforced(self, tmp_path):
        rows = [r.copy() for r in GOLDEN_OHLCV]
        rows[0][3] = "120.0"  # low above open/close
        path = write_csv(tmp_path / "o.csv", OHLCV_HEADER, rows)
        with pytest.raises(DataError, match="OHLC ordering"):
            dp.load_csv(path, "ohlcv")

    def test_sentiment_empty_cell_is_missing(self, tmp_path):
        rows = [["2023-01-01", "", "0.4"], ["2023-01-02", "0.7", "0.5"]]
        path = write_csv(tmp_path / "s.csv", SENT_HEADER, rows)
        frame = dp.load_csv(path, "sentiment")
        assert np.isnan(frame.columns["news"][0])
        assert frame.columns["media"][0] == 0.4

    def test_sentiment_range_enforced(self, tmp_path):
        path = write_csv(tmp_path / "s.csv", SENT_HEADER, [["2023-01-01", "1.2", "0.4"]])
        with pytest.raises(DataError, match="outside"):
            dp.load_csv(path, "sentiment")

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            dp.load_csv(tmp_path / "nope.csv", "ohlcv")


# --------------------------------------------------------------------------
# HTTP fetch against a local mock server
# --------------------------------------------------------------------------


class _MockHandler(http.server.BaseHTTPRequestHandler):
    calls = []
    status = 200
    bars = []

    def do_GET(self):
        type(self).calls.append(self.path)
        if self.status != 200:
            self.send_response(self.status)
            self.end_headers()
            return
        body = json.dumps({"Data": {"Data": self.bars}}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def mock_server():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _MockHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _MockHandler.calls = []
    _MockHandler.status = 200
    yield f"http://127.0.0.1:{server.server_address[1]}/data/v2/histoday"
    server.shutdown()


def _epoch(day):
    return int(dt.datetime.combine(day, dt.time(0), tzinfo=dt.timezone.utc).timestamp())


class TestFetchOhlcv:
    def test_two_day_payload(self, mock_server, tmp_path, monkeypatch):
        monkeypatch.setenv("TEST_API_KEY", "secret")
        d0, d1 = dt.date(2023, 1, 1), dt.date(2023, 1, 2)
        _MockHandler.bars = [
            {"time": _epoch(d0), "open": 100.0, "high": 110.0, "low": 95.0,
             "close": 105.0, "volumefrom": 1000.0, "volumeto": 105000.0},
            {"time": _epoch(d1), "open": 105.0, "high": 112.0, "low": 101.0,
             "close": 102.0, "volumefrom": 1100.0, "volumeto": 112200.0},
        ]
        frame = dp.fetch_ohlcv(
            mock_server, "BTC", d0, d1, "TEST_API_KEY", tmp_path / "cache", backoff_s=0.0
        )
        assert len(frame) == 2
        assert frame.columns["close"].tolist() == [105.0, 102.0]
        assert (tmp_path / "cache" / "BTC" / "2023-01-01_2023-01-02.csv").exists()
        query = _MockHandler.calls[-1]
        for param in ("fsym=BTC", "tsym=USD", "toTs=", "limit=1"):
            assert param in query

    def test_cache_short_circuits_network(self, mock_server, tmp_path, monkeypatch):
        monkeypatch.setenv("TEST_API_KEY", "secret")
        d0, d1 = dt.date(2023, 1, 1), dt.date(2023, 1, 2)
        _MockHandler.bars = [
            {"time": _epoch(d0), "open": 100.0, "high": 110.0, "low": 95.0,
             "close": 105.0, "volumefrom": 1000.0, "volumeto": 105000.0},
        ]
        dp.fetch_ohlcv(mock_server, "BTC", d0, d1, "TEST_API_KEY", tmp_path / "c", backoff_s=0.0)
        first = len(_MockHandler.calls)
        dp.fetch_ohlcv(mock_server, "BTC", d0, d1, "TEST_API_KEY", tmp_path / "c", backoff_s=0.0)
        assert len(_MockHandler.calls) == first

    def test_missing_key_fails_before_request(self, mock_server, tmp_path, monkeypatch):
        monkeypatch.delenv("NO_SUCH_KEY", raising=False)
        with pytest.raises(EnvError, match="NO_SUCH_KEY"):
            dp.fetch_ohlcv(
                mock_server, "BTC", dt.date(2023, 1, 1), dt.date(2023, 1, 2),
                "NO_SUCH_KEY", tmp_path / "c",
            )
        assert _MockHandler.calls == []

    def test_server_errors_exhaust_retries(self, mock_server, tmp_path, monkeypatch):
        monkeypatch.setenv("TEST_API_KEY", "secret")
        _MockHandler.status = 500
        with pytest.raises(NetworkError, match="3 attempts"):
            dp.fetch_ohlcv(
                mock_server, "BTC", dt.date(2023, 1, 1), dt.date(2023, 1, 2),
                "TEST_API_KEY", tmp_path / "c", backoff_s=0.0,
            )
        assert len(_MockHandler.calls) == 3


class TestGoldenFixtures:
    def test_shipped_golden_pair_loads_and_aligns(self):
        from pathlib import Path

        fixtures = Path(__file__).parent / "fixtures"
        ohlcv = dp.load_csv(fixtures / "golden_ohlcv.csv", "ohlcv")
        senti = dp.load_csv(fixtures / "golden_sentiment.csv", "sentiment")
        assert len(ohlcv) == 5
        ms = dp.align_and_impute(ohlcv, senti)
        # one empty media cell plus one fully missing day
        assert ms.n_imputed == 3
        np.testing.assert_array_equal(ms.sent[2], [0.5, 0.5])
        assert ms.sent[0].tolist() == [0.62, 0.55]


class TestAlignAndImpute:
    def ohlcv(self, tmp_path):
        return dp.load_csv(write_csv(tmp_path / "o.csv", OHLCV_HEADER, GOLDEN_OHLCV), "ohlcv")

    def test_missing_day_imputed(self, tmp_path):
        sent = dp.load_csv(
            write_csv(tmp_path / "s.csv", SENT_HEADER, [GOLDEN_SENT[0], GOLDEN_SENT[2]]),
            "sentiment",
        )
        ms = dp.align_and_impute(self.ohlcv(tmp_path), sent)
        assert ms.n_imputed == 2
        np.testing.assert_array_equal(ms.sent[1], [0.5, 0.5])

    def test_full_overlap_no_imputation(self, tmp_path):
        sent = dp.load_csv(write_csv(tmp_path / "s.csv", SENT_HEADER, GOLDEN_SENT), "sentiment")
        ms = dp.align_and_impute(self.ohlcv(tmp_path), sent)
        assert ms.n_imputed == 0
        assert ms.fin.shape == (3, 4)
        np.testing.assert_array_equal(ms.target, [105.0, 102.0, 107.0])

    def test_disjoint_ranges_rejected(self, tmp_path):
        sent = dp.load_csv(
            write_csv(tmp_path / "s.csv", SENT_HEADER, [["2024-05-05", "0.5", "0.5"]]),
            "sentiment",
        )
        with pytest.raises(DataError, match="intersect"):
            dp.align_and_impute(self.ohlcv(tmp_path), sent)


class TestPctDiff:
    def test_direct_arithmetic(self):
        np.testing.assert_allclose(
            dp.pct_diff(np.array([100.0, 110.0, 99.0])), [0.10, -0.10], atol=1e-15
        )

    def test_constant_series(self):
        np.testing.assert_array_equal(dp.pct_diff(np.full(5, 7.0)), np.zeros(4))

    def test_nonpositive_price_rejected(self):
        with pytest.raises(DataError):
            dp.pct_diff(np.array([10.0, 0.0, 5.0]))

    def test_inverse_examples(self):
        np.testing.assert_allclose(
            dp.inverse_pct_diff(100.0, np.array([0.10, -0.10])), [100.0, 110.0, 99.0], rtol=1e-12
        )
        np.testing.assert_array_equal(dp.inverse_pct_diff(42.0, np.array([])), [42.0])

    def test_degenerate_diff_rejected(self):
        with pytest.raises(DataError):
            dp.inverse_pct_diff(100.0, np.array([-1.0]))

    @given(
        st.lists(st.floats(min_value=0.5, max_value=1e6, allow_nan=False), min_size=2, max_size=40)
    )
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, prices):
        p = np.asarray(prices)
        rebuilt = dp.inverse_pct_diff(p[0], dp.pct_diff(p))
        np.testing.assert_allclose(rebuilt, p, rtol=1e-9)


class TestScaler:
    def test_direct_arithmetic(self):
        s = dp.MinMaxScaler().fit(np.array([[2.0], [4.0], [6.0]]))
        np.testing.assert_allclose(
            s.transform(np.array([[2.0], [4.0], [6.0]]))[:, 0], [0.0, 0.5, 1.0], atol=1e-15
        )

    @given(
        st.lists(
            st.tuples(
                st.floats(-1e6, 1e6, allow_nan=False), st.floats(-1e6, 1e6, allow_nan=False)
            ),
            min_size=2,
            max_size=30,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, rows):
        x = np.asarray(rows)
        s = dp.MinMaxScaler().fit(x)
        np.testing.assert_allclose(s.invert(s.transform(x)), x, atol=1e-12 * max(1, np.abs(x).max()))

    def test_extrapolation_not_clipped(self):
        s = dp.MinMaxScaler().fit(np.array([[0.0], [10.0]]))
        assert s.transform(np.array([[15.0]]))[0, 0] == pytest.approx(1.5)

    def test_use_before_fit(self):
        with pytest.raises(StateError):
            dp.MinMaxScaler().transform(np.zeros((2, 1)))

    def test_constant_column_warns_and_zeroes(self, caplog):
        import logging

        with caplog.at_level(logging.WARNING, logger="damcast.datapipe"):
            s = dp.MinMaxScaler().fit(np.array([[1.0, 5.0], [1.0, 6.0]]))
        assert "constant" in caplog.text
        out = s.transform(np.array([[1.0, 5.5]]))
        assert out[0, 0] == 0.0
        np.testing.assert_allclose(s.invert(out), [[1.0, 5.5]], atol=1e-12)


class TestWindowsAndSplit:
    def series(self, t):
        rng = np.random.default_rng(t)
        dates = [dt.date(2022, 1, 1) + dt.timedelta(days=i) for i in range(t)]
        close = rng.uniform(50, 150, size=t)
        return dp.ModalSeries(
            dates=dates,
            fin=rng.normal(size=(t, 4)),
            sent=rng.uniform(size=(t, 2)),
            target=close,
            raw_close=close.copy(),
        )

    def test_window_count(self):
        samples = dp.make_windows(self.series(5), 3)
        assert len(samples) == 2

    def test_first_target_is_index_window(self):
        ms = self.series(10)
        samples = dp.make_windows(ms, 4)
        assert samples[0].target_date == ms.dates[4]
        assert samples[0].target_next == ms.target[4]
        assert samples[0].anchor_close == ms.raw_close[3]

    def test_targets_cover_suffix(self):
        ms = self.series(30)
        samples = dp.make_windows(ms, 7)
        np.testing.assert_array_equal(
            [s.target_next for s in samples], ms.target[7:]
        )

    def test_too_short_series(self):
        with pytest.raises(DataError):
            dp.make_windows(self.series(4), 4)

    def test_split_counts(self):
        samples = dp.make_windows(self.series(105), 5)  # 100 samples
        train, val = dp.split_train_val(samples)
        assert len(val) == 70
        assert len(train) == 30

    def test_val_is_chronological_suffix(self):
        samples = dp.make_windows(self.series(120), 10)
        train, val = dp.split_train_val(samples)
        assert max(s.target_date for s in train) < min(s.target_date for s in val)
        assert train + val == samples  # order-preserving partition

    def test_too_few_samples(self):
        samples = dp.make_windows(self.series(40), 5)
        with pytest.raises(DataError):
            dp.split_train_val(samples)


class TestCorrelationScreen:
    def test_feature_equal_to_close_always_selected(self):
        ms = TestWindowsAndSplit().series(50)
        ms.fin[:, 0] = ms.target  # open == close
        assert "open" in dp.correlation_screen(ms, 0.99)

    def test_noise_excluded_at_half_threshold(self):
        ms = TestWindowsAndSplit().series(1000)
        assert dp.correlation_screen(ms, 0.5) == []

    def test_zero_threshold_selects_all(self):
        ms = TestWindowsAndSplit().series(50)
        assert dp.correlation_screen(ms, 0.0) == list(dp.FIN_FEATURES)


class TestPrepareDataset:
    def test_pipeline_determinism(self, tmp_path):
        ohlcv, senti = synth_market(tmp_path / "d", n_days=150, seed=5)
        a = dp.prepare_dataset(ohlcv, senti, stationary=True, window=10)
        b = dp.prepare_dataset(ohlcv, senti, stationary=True, window=10)
        assert a.fingerprint == b.fingerprint
        assert len(a.train) == len(b.train)
        for sa, sb in zip(a.train + a.val, b.train + b.val):
            assert sa.fin_win.tobytes() == sb.fin_win.tobytes()
            assert sa.sent_win.tobytes() == sb.sent_win.tobytes()
            assert sa.target_next == sb.target_next

    def test_fingerprint_shared_across_modes(self, tmp_path):
        ohlcv, senti = synth_market(tmp_path / "d", n_days=150, seed=6)
        raw = dp.prepare_dataset(ohlcv, senti, stationary=False, window=10)
        stat = dp.prepare_dataset(ohlcv, senti, stationary=True, window=10)
        assert raw.fingerprint == stat.fingerprint

    def test_stationary_reconstruction_consistency(self, tmp_path):
        # predicting the true pct-diffs and rebuilding prices must recover the
        # true closes
        ohlcv, senti = synth_market(tmp_path / "d", n_days=160, seed=7)
        data = dp.prepare_dataset(ohlcv, senti, stationary=True, window=10)
        for s in data.val:
            true_diff = data.target_scaler.invert(np.array([[s.target_next]]))[0, 0]
            rebuilt = s.anchor_close * (1.0 + true_diff)
            frame = dp.load_csv(ohlcv, "ohlcv")
            idx = frame.dates.index(s.target_date)
            assert rebuilt == pytest.approx(frame.columns["close"][idx], rel=1e-6)

    def test_scaler_never_peeks_at_validation(self, tmp_path):
        ohlcv, senti = synth_market(tmp_path / "d", n_days=200, seed=8)
        train_fit = dp.prepare_dataset(ohlcv, senti, window=10, scale_scope="train")
        all_fit = dp.prepare_dataset(ohlcv, senti, window=10, scale_scope="all")
        assert train_fit.target_scaler.state() != all_fit.target_scaler.state()

    def test_financial_only_uses_neutral_sentiment(self, tmp_path):
        ohlcv, _ = synth_market(tmp_path / "d", n_days=150, seed=9)
        data = dp.prepare_dataset(ohlcv, None, window=10)
        assert all((s.sent_win == 0.0).all() for s in data.train)  # constant scales to 0
