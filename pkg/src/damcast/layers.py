"""Parameterized building blocks: linear projection, single-head scaled
dot-product attention, and an LSTM cell.

All parameters are float64 tensors flagged requires_grad. Layers expose
`named_parameters(prefix)` so models can assemble the flat weight
manifest (`dam.intra_fin.q_proj.W` style names).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ndcore as nd
from .errors import ConfigError, DimensionError
from .ndcore import Tensor

INIT_SCHEMES = ("xavier_uniform",)


def init_rng(seed: int) -> np.random.Generator:
    """Deterministic generator for parameter initialization."""
    return np.random.default_rng(seed)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class LinearLayer:
    """Affine map x -> xW + b; b may be absent for pure projections."""

    W: Tensor
    b: Tensor | None

    @property
    def in_features(self) -> int:
        return self.W.shape[0]

    @property
    def out_features(self) -> int:
        return self.W.shape[1]

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.W", self.W
        if self.b is not None:
            yield f"{prefix}.b", self.b


def make_linear(
    rng: np.random.Generator,
    in_features: int,
    out_features: int,
    bias: bool = True,
    scheme: str = "xavier_uniform",
) -> LinearLayer:
    if out_features < 1 or in_features < 1:
        raise ConfigError(f"linear layer needs positive dims, got {in_features}x{out_features}")
    if scheme not in INIT_SCHEMES:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    w = xavier_uniform(rng, in_features, out_features, (in_features, out_features))
    b = nd.tensor(np.zeros(out_features), requires_grad=True) if bias else None
    return LinearLayer(W=nd.tensor(w, requires_grad=True), b=b)


def linear_forward(layer: LinearLayer, x: Tensor) -> Tensor:
    """xW + b for a (T,in) matrix (bias broadcast over rows) or an (in,) vector."""
    out = nd.matmul(x, layer.W)
    if layer.b is None:
        return out
    if out.data.ndim == 1:
        return nd.add(out, layer.b)
    return nd.add_rowvec(out, layer.b)


@dataclass
class AttentionLayer:
    """Single-head scaled dot-product attention; V shares K's source but
    has its own projection."""

    q_proj: LinearLayer
    k_proj: LinearLayer
    v_proj: LinearLayer
    d_k: int

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.q_proj.named_parameters(f"{prefix}.q_proj")
        yield from self.k_proj.named_parameters(f"{prefix}.k_proj")
        yield from self.v_proj.named_parameters(f"{prefix}.v_proj")


def make_attention(
    rng: np.random.Generator, query_in: int, key_in: int, d_k: int
) -> AttentionLayer:
    if d_k < 1:
        raise ConfigError(f"attention key dimension must be positive, got {d_k}")
    return AttentionLayer(
        q_proj=make_linear(rng, query_in, d_k, bias=False),
        k_proj=make_linear(rng, key_in, d_k, bias=False),
        v_proj=make_linear(rng, key_in, d_k, bias=False),
        d_k=d_k,
    )


def attention(att: AttentionLayer, queries_src: Tensor, keys_src: Tensor) -> tuple[Tensor, Tensor]:
    """softmax(QK^T / sqrt(d_k)) V with Q from queries_src, K and V from keys_src.

    Returns (output, weights); weights rows are the per-query attention
    distributions over keys.
    """
    if queries_src.data.ndim != 2 or keys_src.data.ndim != 2:
        raise DimensionError(
            f"attention sources must be rank-2, got {queries_src.shape} and {keys_src.shape}"
        )
    q = linear_forward(att.q_proj, queries_src)
    k = linear_forward(att.k_proj, keys_src)
    v = linear_forward(att.v_proj, keys_src)
    scores = nd.scale(nd.matmul(q, nd.transpose(k)), 1.0 / math.sqrt(att.d_k))
    weights = nd.softmax_rows(scores)
    return nd.matmul(weights, v), weights


@dataclass
class LstmCellParams:
    """Gate weights over the concatenated [h_prev, x_t] input."""

    w_i: Tensor
    w_f: Tensor
    w_o: Tensor
    w_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_i.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_i.shape[0] - self.hidden_size

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for name in ("w_i", "w_f", "w_o", "w_c", "b_i", "b_f", "b_o", "b_c"):
            yield f"{prefix}.{name}", getattr(self, name)


def make_lstm(
    rng: np.random.Generator, input_size: int, hidden_size: int, scheme: str = "xavier_uniform"
) -> LstmCellParams:
    """Xavier-initialized gates; forget-gate bias starts at 1.0 to keep the
    cell state open early in training."""
    if hidden_size < 1 or input_size < 1:
        raise ConfigError(f"lstm needs positive dims, got input {input_size}, hidden {hidden_size}")
    if scheme not in INIT_SCHEMES:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    rows = hidden_size + input_size

    def w():
        return nd.tensor(xavier_uniform(rng, rows, hidden_size, (rows, hidden_size)), requires_grad=True)

    def b(value=0.0):
        return nd.tensor(np.full(hidden_size, value), requires_grad=True)

    return LstmCellParams(
        w_i=w(), w_f=w(), w_o=w(), w_c=w(),
        b_i=b(), b_f=b(1.0), b_o=b(), b_c=b(),
    )


def lstm_step(
    p: LstmCellParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor
) -> tuple[Tensor, Tensor]:
    """One cell update over [h_prev, x_t]; returns (h_t, c_t)."""
    if x_t.data.ndim != 1 or h_prev.data.ndim != 1 or c_prev.data.ndim != 1:
        raise DimensionError("lstm_step expects rank-1 state and input tensors")
    if x_t.shape[0] != p.input_size or h_prev.shape[0] != p.hidden_size:
        raise DimensionError(
            f"lstm_step shapes {x_t.shape}/{h_prev.shape} inconsistent with params "
            f"(input {p.input_size}, hidden {p.hidden_size})"
        )
    if c_prev.shape != h_prev.shape:
        raise DimensionError(f"cell/hidden state shapes differ: {c_prev.shape} vs {h_prev.shape}")
    hx = nd.concat(h_prev, x_t, axis=0)
    i_gate = nd.sigmoid(nd.add(nd.matmul(hx, p.w_i), p.b_i))
    f_gate = nd.sigmoid(nd.add(nd.matmul(hx, p.w_f), p.b_f))
    c_tilde = nd.tanh_act(nd.add(nd.matmul(hx, p.w_c), p.b_c))
    c_t = nd.add(nd.hadamard(f_gate, c_prev), nd.hadamard(i_gate, c_tilde))
    o_gate = nd.sigmoid(nd.add(nd.matmul(hx, p.w_o), p.b_o))
    h_t = nd.hadamard(o_gate, nd.tanh_act(c_t))
    return h_t, c_t
