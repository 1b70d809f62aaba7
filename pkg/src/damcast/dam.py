"""Dual-attention multimodal forecaster.

The full model renews each modality with self-attention over time,
fuses the two streams with bidirectional cross-attention (financial
queries over sentiment keys, then the reverse, concatenated), and runs
an LSTM over the fused window; the last hidden state feeds a scalar
head. Ablation and baseline fusion rules (plain concatenation,
additive, multiplicative, gated) are selected by VariantSpec, and a
model only allocates the parameters its variant uses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import layers, ndcore as nd
from .errors import ConfigError, DimensionError, MissingInputError
from .layers import AttentionLayer, LinearLayer, LstmCellParams
from .ndcore import Tensor

FUSION_KINDS = (
    "full",
    "no_intra",
    "no_cross",
    "concat_only",
    "additive",
    "multiplicative",
    "gated",
)

WEIGHTS_BIN = "weights.bin"
WEIGHTS_MANIFEST = "weights.manifest.json"
MODEL_CONFIG = "model_config.json"


@dataclass(frozen=True)
class VariantSpec:
    """Fusion-rule selector; exactly one kind."""

    kind: str

    def __post_init__(self):
        if self.kind not in FUSION_KINDS:
            raise ConfigError(f"unknown fusion variant {self.kind!r}; choose from {FUSION_KINDS}")


@dataclass(frozen=True)
class DamConfig:
    variant: VariantSpec = field(default_factory=lambda: VariantSpec("full"))
    d_model: int = 16
    hidden: int = 64
    window: int = 30
    fin_features: int = 4
    sent_features: int = 2
    use_sentiment: bool = True

    def __post_init__(self):
        for name in ("d_model", "hidden", "window", "fin_features", "sent_features"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.use_sentiment and self.variant.kind != "concat_only":
            raise ConfigError(
                f"financial-only mode only supports the concat_only variant, got {self.variant.kind!r}"
            )

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.kind,
            "d_model": self.d_model,
            "hidden": self.hidden,
            "window": self.window,
            "fin_features": self.fin_features,
            "sent_features": self.sent_features,
            "use_sentiment": self.use_sentiment,
        }

    @staticmethod
    def from_dict(d: dict) -> "DamConfig":
        known = {
            "variant", "d_model", "hidden", "window",
            "fin_features", "sent_features", "use_sentiment",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        d = dict(d)
        d["variant"] = VariantSpec(d.get("variant", "full"))
        return DamConfig(**d)


def fused_width(cfg: DamConfig) -> int:
    """Feature width the variant's fusion rule feeds to the LSTM."""
    kind = cfg.variant.kind
    if kind in ("full", "no_intra", "no_cross"):
        return 2 * cfg.d_model
    if kind == "concat_only":
        return cfg.fin_features + (cfg.sent_features if cfg.use_sentiment else 0)
    return cfg.d_model  # additive / multiplicative / gated


@dataclass
class DamModel:
    cfg: DamConfig
    seed: int
    intra_fin: AttentionLayer | None = None
    intra_sent: AttentionLayer | None = None
    cross_fin_q: AttentionLayer | None = None
    cross_sent_q: AttentionLayer | None = None
    raw_fin_proj: LinearLayer | None = None
    raw_sent_proj: LinearLayer | None = None
    fuse_add_fin: LinearLayer | None = None
    fuse_add_sent: LinearLayer | None = None
    mult_proj: LinearLayer | None = None
    gate_proj: LinearLayer | None = None
    lstm: LstmCellParams | None = None
    head: LinearLayer | None = None

    _COMPONENTS = (
        "intra_fin", "intra_sent", "cross_fin_q", "cross_sent_q",
        "raw_fin_proj", "raw_sent_proj", "fuse_add_fin", "fuse_add_sent",
        "mult_proj", "gate_proj", "lstm", "head",
    )

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name in self._COMPONENTS:
            comp = getattr(self, name)
            if comp is not None:
                yield from comp.named_parameters(f"dam.{name}")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())


def build_model(cfg: DamConfig, seed: int) -> DamModel:
    """Instantiate exactly the components the variant needs.

    Component creation order is fixed, so a given (cfg, seed) always
    produces bit-identical parameters.
    """
    rng = layers.init_rng(seed)
    model = DamModel(cfg=cfg, seed=seed)
    kind = cfg.variant.kind
    d = cfg.d_model

    if kind in ("full", "no_cross"):
        model.intra_fin = layers.make_attention(rng, cfg.fin_features, cfg.fin_features, d)
        model.intra_sent = layers.make_attention(rng, cfg.sent_features, cfg.sent_features, d)
    if kind in ("full", "no_intra"):
        model.cross_fin_q = layers.make_attention(rng, d, d, d)
        model.cross_sent_q = layers.make_attention(rng, d, d, d)
    if kind in ("no_intra", "multiplicative", "gated"):
        model.raw_fin_proj = layers.make_linear(rng, cfg.fin_features, d, bias=False)
        if kind != "gated":
            model.raw_sent_proj = layers.make_linear(rng, cfg.sent_features, d, bias=False)
    if kind in ("additive", "multiplicative"):
        model.fuse_add_fin = layers.make_linear(rng, cfg.fin_features, d, bias=True)
        model.fuse_add_sent = layers.make_linear(rng, cfg.sent_features, d, bias=False)
    if kind == "multiplicative":
        model.mult_proj = layers.make_linear(rng, d, d, bias=False)
    if kind == "gated":
        model.gate_proj = layers.make_linear(rng, cfg.sent_features, d, bias=True)

    model.lstm = layers.make_lstm(rng, input_size=fused_width(cfg), hidden_size=cfg.hidden)
    model.head = layers.make_linear(rng, cfg.hidden, 1, bias=True)
    return model


def unimodal_attend(model: DamModel, series: Tensor) -> Tensor:
    """Self-attention over the time steps of one modality's window.

    The modality is identified by feature width (financial vs sentiment).
    """
    if series.data.ndim != 2:
        raise DimensionError(f"modality window must be rank-2, got shape {series.shape}")
    width = series.shape[1]
    if width == model.cfg.fin_features:
        layer = model.intra_fin
    elif width == model.cfg.sent_features:
        layer = model.intra_sent
    else:
        raise DimensionError(
            f"series width {width} matches neither financial ({model.cfg.fin_features}) "
            f"nor sentiment ({model.cfg.sent_features}) features"
        )
    if layer is None:
        raise ConfigError(f"variant {model.cfg.variant.kind!r} has no intra-modal attention")
    out, _ = layers.attention(layer, series, series)
    return out


def cross_modal_fuse(model: DamModel, fin_hat: Tensor, sent_hat: Tensor) -> Tensor:
    """Bidirectional cross-attention, financial-as-query half first."""
    if fin_hat.shape != sent_hat.shape:
        raise DimensionError(
            f"cross-modal fusion needs matching (T, d) inputs, got {fin_hat.shape} and {sent_hat.shape}"
        )
    if model.cross_fin_q is None or model.cross_sent_q is None:
        raise ConfigError(f"variant {model.cfg.variant.kind!r} has no cross-modal attention")
    fin_as_q, _ = layers.attention(model.cross_fin_q, fin_hat, sent_hat)
    sent_as_q, _ = layers.attention(model.cross_sent_q, sent_hat, fin_hat)
    return nd.concat(fin_as_q, sent_as_q, axis=1)


def fuse_variant(
    model: DamModel,
    fin_win: Tensor,
    sent_win: Tensor | None,
    fin_hat: Tensor | None = None,
    sent_hat: Tensor | None = None,
) -> Tensor:
    """Produce the fused (L, width) representation for the model's variant."""
    kind = model.cfg.variant.kind
    if kind == "full":
        if fin_hat is None or sent_hat is None:
            raise ConfigError("full variant needs the attended representations")
        return cross_modal_fuse(model, fin_hat, sent_hat)
    if kind == "no_intra":
        return cross_modal_fuse(
            model,
            layers.linear_forward(model.raw_fin_proj, fin_win),
            layers.linear_forward(model.raw_sent_proj, sent_win),
        )
    if kind == "no_cross":
        if fin_hat is None or sent_hat is None:
            raise ConfigError("no_cross variant needs the attended representations")
        return nd.concat(fin_hat, sent_hat, axis=1)
    if kind == "concat_only":
        if not model.cfg.use_sentiment:
            return fin_win
        return nd.concat(fin_win, sent_win, axis=1)
    if kind == "additive":
        return nd.add(
            layers.linear_forward(model.fuse_add_fin, fin_win),
            layers.linear_forward(model.fuse_add_sent, sent_win),
        )
    if kind == "multiplicative":
        additive = nd.add(
            layers.linear_forward(model.fuse_add_fin, fin_win),
            layers.linear_forward(model.fuse_add_sent, sent_win),
        )
        interaction = nd.hadamard(
            layers.linear_forward(model.raw_fin_proj, fin_win),
            layers.linear_forward(model.raw_sent_proj, sent_win),
        )
        return nd.add(additive, layers.linear_forward(model.mult_proj, interaction))
    if kind == "gated":
        gate = nd.sigmoid(layers.linear_forward(model.gate_proj, sent_win))
        return nd.hadamard(layers.linear_forward(model.raw_fin_proj, fin_win), gate)
    raise ConfigError(f"unknown fusion variant {kind!r}")


def dam_forward(model: DamModel, fin_win: Tensor, sent_win: Tensor | None = None) -> Tensor:
    """Window -> next-step prediction in model (scaled) units, shape (1,)."""
    cfg = model.cfg
    if fin_win.data.ndim != 2 or fin_win.shape[1] != cfg.fin_features:
        raise DimensionError(
            f"financial window must be (L, {cfg.fin_features}), got {fin_win.shape}"
        )
    if cfg.use_sentiment:
        if sent_win is None:
            raise DimensionError("this model needs a sentiment window")
        if sent_win.data.ndim != 2 or sent_win.shape[1] != cfg.sent_features:
            raise DimensionError(
                f"sentiment window must be (L, {cfg.sent_features}), got {sent_win.shape}"
            )
        if sent_win.shape[0] != fin_win.shape[0]:
            raise DimensionError(
                f"window lengths disagree: {fin_win.shape[0]} vs {sent_win.shape[0]}"
            )

    fin_hat = sent_hat = None
    if cfg.variant.kind in ("full", "no_cross"):
        fin_hat = unimodal_attend(model, fin_win)
        sent_hat = unimodal_attend(model, sent_win)
    fused = fuse_variant(model, fin_win, sent_win, fin_hat, sent_hat)

    h = nd.tensor(np.zeros(cfg.hidden))
    c = nd.tensor(np.zeros(cfg.hidden))
    for t in range(fused.shape[0]):
        h, c = layers.lstm_step(model.lstm, nd.take_row(fused, t), h, c)
    return layers.linear_forward(model.head, h)


# --------------------------------------------------------------------------
# persistence: weight manifest + model config, shape-checked on load
# --------------------------------------------------------------------------


def save_model(model: DamModel, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nd.save_tensors(
        dict(model.named_parameters()), out_dir / WEIGHTS_BIN, out_dir / WEIGHTS_MANIFEST
    )
    payload = {"config": model.cfg.to_dict(), "seed": model.seed}
    (out_dir / MODEL_CONFIG).write_text(json.dumps(payload, indent=2) + "\n")


def load_model(model_dir) -> DamModel:
    model_dir = Path(model_dir)
    cfg_path = model_dir / MODEL_CONFIG
    if not cfg_path.exists():
        raise MissingInputError(f"no model config at {cfg_path}")
    payload = json.loads(cfg_path.read_text())
    cfg = DamConfig.from_dict(payload["config"])
    model = build_model(cfg, seed=int(payload.get("seed", 0)))
    stored = nd.load_tensors(model_dir / WEIGHTS_BIN, model_dir / WEIGHTS_MANIFEST)
    expected = dict(model.named_parameters())
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise ConfigError(
            f"weight manifest contradicts model config: missing {missing}, unexpected {extra}"
        )
    for name, t in expected.items():
        if stored[name].shape != t.shape:
            raise ConfigError(
                f"weight {name} has shape {stored[name].shape}, config implies {t.shape}"
            )
        t.data = np.ascontiguousarray(stored[name])
    return model
