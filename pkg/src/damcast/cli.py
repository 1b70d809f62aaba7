"""Batch command-line entry point.

Subcommands wire the pipeline end to end: fetch/ingest -> preprocess ->
train -> evaluate -> ablate -> compare -> lag analysis -> report. Every
command is idempotent given identical inputs and --out, and none
mutates its inputs.

Exit codes: 0 success, 64 usage/config, 65 data, 66 missing file,
2 network or environment failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import dam, datapipe, report as rpt, stats, train_eval
from .dam import VariantSpec
from .errors import (
    ConfigError,
    DamcastError,
    DataError,
    EnvError,
    MissingInputError,
    NetworkError,
)
from .train_eval import TrainConfig

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NETWORK = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_MISSING = 66

DEFAULT_ENDPOINT = "https://min-api.cryptocompare.com/data/v2/histoday"
DEFAULT_LAGS = "5,10,15,20,25,30,32,35,40"
SUMMARY_PAIRS = (("news", "media"), ("news", "close"))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# --------------------------------------------------------------------------
# run configuration file
# --------------------------------------------------------------------------

DATA_KEYS = {
    "ohlcv_csv", "sentiment_csv", "stationary", "window",
    "scale_scope", "val_days", "screen_threshold",
}
MODEL_KEYS = {"variant", "d_model", "hidden", "use_sentiment"}
TRAIN_KEYS = {
    "epochs", "batch_size", "learning_rate", "optimizer", "beta1", "beta2",
    "eps", "grad_clip_norm", "early_stop_patience", "seed",
}


@dataclass
class RunConfig:
    ohlcv_csv: Path
    sentiment_csv: Path | None
    scale_scope: str
    val_days: int
    screen_threshold: float
    train: TrainConfig

    def prepare(self) -> datapipe.PreparedData:
        return datapipe.prepare_dataset(
            self.ohlcv_csv,
            self.sentiment_csv,
            stationary=self.train.stationary,
            window=self.train.window,
            scale_scope=self.scale_scope,
            val_days=self.val_days,
            screen_threshold=self.screen_threshold,
        )

    def to_dict(self) -> dict:
        t = self.train.to_dict()
        return {
            "data": {
                "ohlcv_csv": str(self.ohlcv_csv),
                "sentiment_csv": None if self.sentiment_csv is None else str(self.sentiment_csv),
                "stationary": t.pop("stationary"),
                "window": t.pop("window"),
                "scale_scope": self.scale_scope,
                "val_days": self.val_days,
                "screen_threshold": self.screen_threshold,
            },
            "model": {
                "variant": t.pop("variant"),
                "d_model": t.pop("d_model"),
                "hidden": t.pop("hidden"),
                "use_sentiment": t.pop("use_sentiment"),
            },
            "train": t,
        }


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in config section {section!r}: {unknown}")


def load_run_config(path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"no config file at {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys("<root>", raw, {"data", "model", "train"})
    data = raw.get("data", {})
    model = raw.get("model", {})
    train = raw.get("train", {})
    _check_keys("data", data, DATA_KEYS)
    _check_keys("model", model, MODEL_KEYS)
    _check_keys("train", train, TRAIN_KEYS)
    if "ohlcv_csv" not in data:
        raise ConfigError("config section 'data' needs 'ohlcv_csv'")

    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    kwargs = dict(train)
    if seed_override is not None:
        kwargs["seed"] = seed_override
    kwargs["stationary"] = bool(data.get("stationary", False))
    kwargs["window"] = int(data.get("window", 30))
    if "variant" in model:
        kwargs["variant"] = VariantSpec(model["variant"])
    for key in ("d_model", "hidden", "use_sentiment"):
        if key in model:
            kwargs[key] = model[key]
    train_cfg = TrainConfig(**kwargs)

    sentiment = data.get("sentiment_csv")
    return RunConfig(
        ohlcv_csv=resolve(data["ohlcv_csv"]),
        sentiment_csv=None if sentiment is None else resolve(sentiment),
        scale_scope=data.get("scale_scope", "train"),
        val_days=int(data.get("val_days", datapipe.DEFAULT_VAL_DAYS)),
        screen_threshold=float(data.get("screen_threshold", datapipe.DEFAULT_SCREEN_THRESHOLD)),
        train=train_cfg,
    )


def _write_resolved_config(out_dir: Path, cfg: RunConfig, data: datapipe.PreparedData) -> None:
    echo = cfg.to_dict()
    echo["dataset"] = {
        "fingerprint": data.fingerprint,
        "n_imputed_sentiment_cells": data.n_imputed,
        "correlation_screen": data.screen,
        "feature_scaler": data.feature_scaler.state(),
        "target_scaler": data.target_scaler.state(),
        "train_samples": len(data.train),
        "val_samples": len(data.val),
    }
    (out_dir / "resolved_config.json").write_text(json.dumps(echo, indent=2) + "\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_fetch(args) -> int:
    try:
        start = dt.date.fromisoformat(args.start)
        end = dt.date.fromisoformat(args.until)
    except ValueError as err:
        raise ConfigError(f"bad date: {err}")
    if start > end:
        raise ConfigError(f"--from {start} is after --to {end}")
    frame = datapipe.fetch_ohlcv(
        args.endpoint, args.symbol, start, end, args.api_key_env, args.cache_dir
    )
    datapipe.write_ohlcv_csv(args.out, frame)
    print(f"wrote {len(frame)} daily bars to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = cfg.prepare()
    model = train_eval.new_model(cfg.train)
    model, metrics = train_eval.train(
        model, data.train, data.val, cfg.train, data.target_scaler, data.fingerprint
    )
    dam.save_model(model, out_dir)
    _write_resolved_config(out_dir, cfg, data)
    (out_dir / "metrics.json").write_text(
        json.dumps(dataclasses.asdict(metrics), indent=2) + "\n"
    )
    preds, actuals = train_eval.predict_usd(
        model, data.val, data.target_scaler, cfg.train.stationary
    )
    with (out_dir / "predictions.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "actual_usd", "predicted_usd"])
        for sample, a, p in zip(data.val, actuals, preds):
            writer.writerow([sample.target_date.isoformat(), f"{a:.6f}", f"{p:.6f}"])
    results = train_eval.ResultsWriter(out_dir / "results.csv")
    results.append(train_eval.report_row(metrics, multimodal=cfg.train.use_sentiment))
    print(
        f"trained {metrics.variant} (seed {metrics.seed}): "
        f"median AE {metrics.median_ae_usd:.2f} USD, MAPE {metrics.mape:.4f}"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = cfg.prepare()
    _write_resolved_config(out_dir, cfg, data)
    reports = train_eval.run_ablation(data, cfg.train, out_dir / "ablation.csv")
    for r in reports:
        print(f"{r.variant:<12} median AE {r.median_ae_usd:.2f} USD  MAPE {r.mape:.4f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    datasets = {}
    for stationary in (False, True):
        datasets[stationary] = datapipe.prepare_dataset(
            cfg.ohlcv_csv,
            cfg.sentiment_csv,
            stationary=stationary,
            window=cfg.train.window,
            scale_scope=cfg.scale_scope,
            val_days=cfg.val_days,
            screen_threshold=cfg.screen_threshold,
        )
    _write_resolved_config(out_dir, cfg, datasets[cfg.train.stationary])
    rows = train_eval.run_comparative(datasets, cfg.train, out_dir / "compare.csv")
    for row in rows:
        print(
            f"{row['variant']:<12} stationary={row['stationary']:<5} "
            f"multimodal={row['multimodal']:<5} median AE {row['median_ae_usd']} USD"
        )
    return EXIT_OK


def cmd_lagcorr(args) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise MissingInputError(f"--data must be a directory with ohlcv.csv/sentiment.csv: {data_dir}")
    try:
        lags = [int(x) for x in args.lags.split(",") if x.strip() != ""]
    except ValueError:
        raise ConfigError(f"--lags must be comma-separated integers, got {args.lags!r}")
    if not lags or any(l < 0 for l in lags):
        raise ConfigError(f"--lags must be non-negative integers, got {args.lags!r}")
    ohlcv = datapipe.load_csv(data_dir / "ohlcv.csv", "ohlcv")
    sentiment = datapipe.load_csv(data_dir / "sentiment.csv", "sentiment")
    ms = datapipe.align_and_impute(ohlcv, sentiment)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    matrices = stats.lag_matrix(ms, lags)
    for lag, per_pair in matrices.items():
        stats.write_lag_matrix_csv(out_dir / f"lag_{lag}.csv", per_pair)
        if args.svg:
            names = list(stats.LAG_VARIABLES)
            grid = [
                [
                    (per_pair[(a, b)].r if (a, b) in per_pair else None)
                    for b in names
                ]
                for a in names
            ]
            rpt.heatmap_svg(out_dir / f"lag_{lag}.svg", names, grid, title=f"lag = {lag} days")
    stats.write_lag_long_csv(out_dir / "lag_long.csv", matrices)

    with (out_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag", "var_a", "var_b", "r", "n", "z", "p"])
        for lag in lags:
            for a, b in SUMMARY_PAIRS:
                res = matrices[lag].get((a, b))
                if res is None:
                    continue
                writer.writerow(
                    [lag, a, b, f"{res.r:.4f}", res.n_effective,
                     "" if res.z is None else f"{res.z:.4f}",
                     "" if res.p_two_sided is None else f"{res.p_two_sided:.4f}"]
                )
    (out_dir / "resolved_config.json").write_text(
        json.dumps({"data": str(data_dir), "lags": lags, "svg": bool(args.svg)}, indent=2) + "\n"
    )
    print(f"wrote lag analysis for lags {lags} to {out_dir}")
    return EXIT_OK


def _read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise MissingInputError(f"no run directory at {run_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    sections = []
    for name in ("results.csv", "ablation.csv", "compare.csv"):
        path = run_dir / name
        if path.exists():
            headers, rows = _read_csv_rows(path)
            sections.append(f"== {name}\n" + rpt.text_table(headers, rows))
    metrics_path = run_dir / "metrics.json"
    plots = []
    if metrics_path.exists():
        metrics = json.loads(metrics_path.read_text())
        history = [v for v in metrics.get("loss_history", []) if v == v]  # drop NaN
        if history:
            rpt.polyline_svg(out_dir / "loss.svg", [("train MSE", history)], title="training loss")
            plots.append("loss.svg")
        sections.append(
            "== metrics.json\n"
            + rpt.text_table(
                ["median_ae_usd", "mape", "best_epoch", "variant", "seed"],
                [[
                    f"{metrics['median_ae_usd']:.4f}", f"{metrics['mape']:.5f}",
                    metrics["best_epoch"], metrics["variant"], metrics["seed"],
                ]],
            )
        )
    predictions_path = run_dir / "predictions.csv"
    if predictions_path.exists():
        _, rows = _read_csv_rows(predictions_path)
        actual = [float(r[1]) for r in rows]
        predicted = [float(r[2]) for r in rows]
        rpt.polyline_svg(
            out_dir / "predictions.svg",
            [("actual", actual), ("predicted", predicted)],
            title="validation closes (USD)",
        )
        plots.append("predictions.svg")

    if not sections and not plots:
        raise DataError(f"nothing reportable in {run_dir}")
    summary = "\n".join(sections) if sections else "(no result tables found)\n"
    (out_dir / "summary.txt").write_text(summary)
    print(f"wrote summary.txt{' and ' + ', '.join(plots) if plots else ''} to {out_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser and dispatch
# --------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="damcast", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed (ignored by data-only commands)")

    p = sub.add_parser("fetch", parents=[common], help="download daily bars to a CSV")
    p.add_argument("--symbol", required=True)
    p.add_argument("--from", dest="start", required=True, metavar="YYYY-MM-DD")
    p.add_argument("--to", dest="until", required=True, metavar="YYYY-MM-DD")
    p.add_argument("--endpoint", default=DEFAULT_ENDPOINT)
    p.add_argument("--out", required=True)
    p.add_argument("--api-key-env", default="CRYPTOCOMPARE_API_KEY")
    p.add_argument("--cache-dir", default="cache")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("train", parents=[common], help="train one model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", parents=[common], help="train all fusion-ablation variants")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare", parents=[common], help="comparative grid incl. persistence")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("lagcorr", parents=[common], help="lagged correlation analysis")
    p.add_argument("--data", required=True, help="directory with ohlcv.csv and sentiment.csv")
    p.add_argument("--lags", default=DEFAULT_LAGS)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", action="store_true", help="also emit heatmap SVGs")
    p.set_defaults(func=cmd_lagcorr)

    p = sub.add_parser("report", parents=[common], help="render a run directory to text + SVG")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse funnels usage errors here
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (NetworkError, EnvError) as err:
        print(f"network/environment error: {err}", file=sys.stderr)
        return EXIT_NETWORK
    except MissingInputError as err:
        print(f"missing input: {err}", file=sys.stderr)
        return EXIT_MISSING
    except DamcastError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
