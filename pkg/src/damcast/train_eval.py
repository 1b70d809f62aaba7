"""Training loop, price-space metrics, and the experiment runners that
emit the comparative and ablation result tables.

Training minimizes mean-squared error on scaled targets with mini-batch
Adam (or SGD), global-norm gradient clipping, and early stopping that
restores the best-validation-epoch weights. Runs are deterministic
given the config seed. Metrics are always reported in USD price space;
in stationary mode predictions are percentage changes rebuilt onto each
window's anchor close.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ndcore as nd
from .dam import DamConfig, DamModel, VariantSpec, build_model, dam_forward
from .datapipe import MinMaxScaler, PreparedData, WindowSample
from .errors import ConfigError, DataError, NumericError
from .ndcore import Tensor

log = logging.getLogger(__name__)

RESULTS_COLUMNS = (
    "variant",
    "stationary",
    "multimodal",
    "seed",
    "median_ae_usd",
    "median_ae_star_usd",
    "mape",
    "best_epoch",
    "fingerprint",
)

ABLATION_ORDER = ("concat_only", "no_intra", "no_cross", "full")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float = 1.0
    early_stop_patience: int = 20
    seed: int = 42
    stationary: bool = False
    variant: VariantSpec = field(default_factory=lambda: VariantSpec("full"))
    window: int = 30
    d_model: int = 16
    hidden: int = 64
    use_sentiment: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.eps <= 0 or self.grad_clip_norm <= 0:
            raise ConfigError("eps and grad_clip_norm must be positive")
        if not 1 <= self.early_stop_patience <= self.epochs:
            raise ConfigError("early_stop_patience must lie in [1, epochs]")

    def dam_config(self) -> DamConfig:
        return DamConfig(
            variant=self.variant,
            d_model=self.d_model,
            hidden=self.hidden,
            window=self.window,
            use_sentiment=self.use_sentiment,
        )

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["variant"] = self.variant.kind
        return d


@dataclass(frozen=True)
class MetricsReport:
    median_ae_usd: float
    mape: float
    loss_history: tuple[float, ...]
    best_epoch: int
    seed: int
    variant: str
    stationary: bool
    fingerprint: str


def new_model(cfg: TrainConfig) -> DamModel:
    return build_model(cfg.dam_config(), cfg.seed)


# --------------------------------------------------------------------------
# optimizers
# --------------------------------------------------------------------------


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * p.grad**2
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Sgd:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


def make_optimizer(cfg: TrainConfig, params: list[Tensor]):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    return Sgd(params, cfg.learning_rate)


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    total = math.sqrt(
        sum(float((p.grad**2).sum()) for p in params if p.grad is not None)
    )
    if not math.isfinite(total):
        raise NumericError("gradient global norm is non-finite")
    if total > max_norm and total > 0:
        factor = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return total


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def median_abs_error(pred, actual) -> float:
    """Median of |pred - actual|; even lengths average the middle pair."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.ndim != 1:
        raise DataError(f"median_abs_error needs equal vectors, got {pred.shape} and {actual.shape}")
    if pred.size == 0:
        raise DataError("median_abs_error needs at least one prediction")
    return float(np.median(np.abs(pred - actual)))


def mape(pred, actual) -> float:
    """Mean of |pred - actual| / |actual|."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.ndim != 1:
        raise DataError(f"mape needs equal vectors, got {pred.shape} and {actual.shape}")
    if pred.size == 0:
        raise DataError("mape needs at least one prediction")
    if (actual == 0).any():
        raise DataError("mape is undefined when an actual value is zero")
    return float(np.mean(np.abs(pred - actual) / np.abs(actual)))


# --------------------------------------------------------------------------
# forward helpers and evaluation
# --------------------------------------------------------------------------


def _forward(model: DamModel, sample: WindowSample) -> Tensor:
    sent = nd.tensor(sample.sent_win) if model.cfg.use_sentiment else None
    return dam_forward(model, nd.tensor(sample.fin_win), sent)


def _to_usd(scaled_value: float, sample: WindowSample, scaler: MinMaxScaler, stationary: bool) -> float:
    value = float(scaler.invert(np.array([[scaled_value]]))[0, 0])
    if stationary:
        return sample.anchor_close * (1.0 + value)
    return value


def predict_usd(
    model: DamModel, samples: list[WindowSample], scaler: MinMaxScaler, stationary: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Model and ground-truth next-day closes in USD for each sample."""
    preds = np.empty(len(samples))
    actuals = np.empty(len(samples))
    for i, s in enumerate(samples):
        preds[i] = _to_usd(_forward(model, s).item(), s, scaler, stationary)
        actuals[i] = _to_usd(s.target_next, s, scaler, stationary)
    return preds, actuals


def evaluate(
    model: DamModel,
    val_samples: list[WindowSample],
    scaler: MinMaxScaler,
    stationary: bool,
    *,
    loss_history: tuple[float, ...] = (math.nan,),
    best_epoch: int = -1,
    fingerprint: str = "",
) -> MetricsReport:
    """Price-space metrics on the validation samples."""
    preds, actuals = predict_usd(model, val_samples, scaler, stationary)
    return MetricsReport(
        median_ae_usd=median_abs_error(preds, actuals),
        mape=mape(preds, actuals),
        loss_history=tuple(loss_history),
        best_epoch=best_epoch,
        seed=model.seed,
        variant=model.cfg.variant.kind,
        stationary=stationary,
        fingerprint=fingerprint,
    )


def persistence_report(
    val_samples: list[WindowSample], scaler: MinMaxScaler, stationary: bool, fingerprint: str = ""
) -> MetricsReport:
    """Repeat-last-close baseline; the floor every trained model must beat."""
    preds = np.array([s.anchor_close for s in val_samples])
    actuals = np.array(
        [_to_usd(s.target_next, s, scaler, stationary) for s in val_samples]
    )
    return MetricsReport(
        median_ae_usd=median_abs_error(preds, actuals),
        mape=mape(preds, actuals),
        loss_history=(math.nan,),
        best_epoch=-1,
        seed=-1,
        variant="persistence",
        stationary=stationary,
        fingerprint=fingerprint,
    )


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def _mse_over(model: DamModel, samples: list[WindowSample]) -> float:
    errs = np.empty(len(samples))
    for i, s in enumerate(samples):
        errs[i] = _forward(model, s).item() - s.target_next
    return float(np.mean(errs**2))


def _batch_loss(model: DamModel, batch: list[WindowSample]) -> Tensor:
    total = None
    for s in batch:
        err = nd.sub(_forward(model, s), nd.tensor([s.target_next]))
        sq = nd.hadamard(err, err)
        total = sq if total is None else nd.add(total, sq)
    return nd.scale(total, 1.0 / len(batch))


def train(
    model: DamModel,
    train_samples: list[WindowSample],
    val_samples: list[WindowSample],
    cfg: TrainConfig,
    scaler: MinMaxScaler,
    fingerprint: str = "",
) -> tuple[DamModel, MetricsReport]:
    """Fit the model; returns it with the best-validation weights restored."""
    if not train_samples or not val_samples:
        raise DataError("train and validation splits must be non-empty")
    params = model.parameters()
    optimizer = make_optimizer(cfg, params)
    shuffle_rng = np.random.default_rng(cfg.seed)

    best_val = math.inf
    best_epoch = 0
    best_weights = [p.data.copy() for p in params]
    stale = 0
    loss_history: list[float] = []

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_samples))
        epoch_sq_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[start : start + cfg.batch_size]]
            nd.zero_grad(params)
            try:
                with nd.GradTape() as tape:
                    loss = _batch_loss(model, batch)
                nd.backward(loss, tape)
                clip_global_norm(params, cfg.grad_clip_norm)
            except NumericError as err:
                raise NumericError(
                    f"divergence at epoch {epoch}, batch {start // cfg.batch_size}: {err}"
                )
            optimizer.step()
            epoch_sq_sum += loss.item() * len(batch)
        loss_history.append(epoch_sq_sum / len(train_samples))

        val_loss = _mse_over(model, val_samples)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_weights = [p.data.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    for p, w in zip(params, best_weights):
        p.data = w
    report = evaluate(
        model,
        val_samples,
        scaler,
        cfg.stationary,
        loss_history=tuple(loss_history),
        best_epoch=best_epoch,
        fingerprint=fingerprint,
    )
    return model, report


# --------------------------------------------------------------------------
# experiment runners and the results CSV
# --------------------------------------------------------------------------


def report_row(report: MetricsReport, multimodal: bool, **extra) -> dict:
    row = {
        "variant": report.variant,
        "stationary": str(report.stationary).lower(),
        "multimodal": str(multimodal).lower(),
        "seed": report.seed,
        "median_ae_usd": f"{report.median_ae_usd:.6f}",
        "median_ae_star_usd": f"{report.median_ae_usd:.6f}" if report.stationary else "",
        "mape": f"{report.mape:.6f}",
        "best_epoch": report.best_epoch,
        "fingerprint": report.fingerprint,
    }
    row.update(extra)
    return row


class ResultsWriter:
    """Appends one row per completed run so partial results survive a crash."""

    def __init__(self, path, extra_columns: tuple[str, ...] = ()):
        self.path = Path(path)
        self.columns = RESULTS_COLUMNS + extra_columns
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="") as fh:
            csv.writer(fh).writerow(self.columns)

    def append(self, row: dict) -> None:
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow([row.get(c, "") for c in self.columns])


def run_ablation(
    data: PreparedData, base_cfg: TrainConfig, out_csv=None
) -> list[MetricsReport]:
    """Train every fusion-ablation variant with identical seed and config.

    Row order follows the ablation table: no attention, no intra-modal,
    no cross-modal, then the full dual-attention model.
    """
    writer = ResultsWriter(out_csv) if out_csv else None
    reports = []
    for kind in ABLATION_ORDER:
        cfg = replace(base_cfg, variant=VariantSpec(kind))
        model = new_model(cfg)
        log.info("ablation: training %s (seed %d)", kind, cfg.seed)
        _, report = train(model, data.train, data.val, cfg, data.target_scaler, data.fingerprint)
        reports.append(report)
        if writer:
            writer.append(report_row(report, multimodal=cfg.use_sentiment))
    return reports


COMPARATIVE_MODELS = (
    # (variant, multimodal)
    ("full", True),
    ("concat_only", True),
    ("concat_only", False),
)


def run_comparative(
    datasets: dict[bool, PreparedData], base_cfg: TrainConfig, out_csv=None
) -> list[dict]:
    """Train {full DAM, concat LSTM} x {raw, stationary} x {multi, fin-only}.

    `datasets` maps stationary flag -> PreparedData. Emits one row per
    run plus a persistence-baseline row; DAM rows carry the relative
    improvement over the matching concat-LSTM run.
    """
    writer = ResultsWriter(out_csv, extra_columns=("improvement_vs_concat",)) if out_csv else None
    rows: list[dict] = []
    concat_mae: dict[tuple[bool, bool], float] = {}

    def emit(row: dict) -> None:
        rows.append(row)
        if writer:
            writer.append(row)

    for stationary, data in sorted(datasets.items()):
        baseline = persistence_report(
            data.val, data.target_scaler, stationary, data.fingerprint
        )
        emit(report_row(baseline, multimodal=False, improvement_vs_concat=""))

    # concat runs first so improvements can be computed in one pass
    ordered = sorted(COMPARATIVE_MODELS, key=lambda m: m[0] != "concat_only")
    for variant, multimodal in ordered:
        for stationary, data in sorted(datasets.items()):
            cfg = replace(
                base_cfg,
                variant=VariantSpec(variant),
                stationary=stationary,
                use_sentiment=multimodal,
            )
            model = new_model(cfg)
            log.info(
                "comparative: %s multimodal=%s stationary=%s", variant, multimodal, stationary
            )
            _, report = train(
                model, data.train, data.val, cfg, data.target_scaler, data.fingerprint
            )
            improvement = ""
            if variant == "concat_only":
                concat_mae[(stationary, multimodal)] = report.median_ae_usd
            else:
                ref = concat_mae.get((stationary, True))
                if ref:
                    improvement = f"{(ref - report.median_ae_usd) / ref:.4f}"
            emit(report_row(report, multimodal=multimodal, improvement_vs_concat=improvement))
    return rows
