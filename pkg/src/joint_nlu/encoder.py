"""Small post-layernorm transformer encoder trained from scratch."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    dropout_p: float = 0.1
    max_seq_len: int = 128
    init_std: float = 0.02
    ln_eps: float = 1e-12

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")


def default_toy_config(vocab_size: int) -> EncoderConfig:
    return EncoderConfig(vocab_size=vocab_size, d_model=64, n_layers=2, n_heads=4,
                         d_ff=128, dropout_p=0.1, max_seq_len=128)


@dataclass
class EncoderOutput:
    hidden: Tensor      # [B, L, d_model]
    mask: np.ndarray    # [B, L] bool


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d, f = cfg.d_model, cfg.d_ff

    def w(*shape):
        return rng.normal(0.0, cfg.init_std, size=shape)

    p = {
        "emb.tok": w(cfg.vocab_size, d),
        "emb.pos": w(cfg.max_seq_len, d),
        "emb.ln.g": np.ones(d),
        "emb.ln.b": np.zeros(d),
    }
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        for m in ("q", "k", "v", "o"):
            p[pre + f"attn.{m}.w"] = w(d, d)
            p[pre + f"attn.{m}.b"] = np.zeros(d)
        p[pre + "ln1.g"] = np.ones(d)
        p[pre + "ln1.b"] = np.zeros(d)
        p[pre + "ff1.w"] = w(f, d)
        p[pre + "ff1.b"] = np.zeros(f)
        p[pre + "ff2.w"] = w(d, f)
        p[pre + "ff2.b"] = np.zeros(d)
        p[pre + "ln2.g"] = np.ones(d)
        p[pre + "ln2.b"] = np.zeros(d)
    return {k: T.parameter(v, name=k) for k, v in p.items()}


def encoder_param_count(cfg: EncoderConfig) -> int:
    d, f = cfg.d_model, cfg.d_ff
    per_layer = 4 * (d * d + d) + 2 * d + (f * d + f) + (d * f + d) + 2 * d
    return cfg.vocab_size * d + cfg.max_seq_len * d + 2 * d + cfg.n_layers * per_layer


def _self_attention(x, mask, params, pre, cfg, train, rng):
    b, n, d = x.shape
    h = cfg.n_heads
    dk = d // h

    def heads(t):
        return T.transpose(T.reshape(t, (b, n, h, dk)), (0, 2, 1, 3))

    q = heads(T.linear(x, params[pre + "attn.q.w"], params[pre + "attn.q.b"]))
    k = heads(T.linear(x, params[pre + "attn.k.w"], params[pre + "attn.k.b"]))
    v = heads(T.linear(x, params[pre + "attn.v.w"], params[pre + "attn.v.b"]))
    scores = T.mul(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(dk))
    attn = T.softmax(scores, axis=-1, mask=mask[:, None, None, :])
    attn = T.dropout(attn, cfg.dropout_p, train, rng)
    ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, n, d))
    return T.linear(ctx, params[pre + "attn.o.w"], params[pre + "attn.o.b"]), attn


def encode(
    ids: np.ndarray,
    mask: np.ndarray,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    return_attention: bool = False,
):
    """Hidden states for a padded id matrix [B, L]."""
    ids = np.asarray(ids)
    mask = np.asarray(mask, dtype=bool)
    b, n = ids.shape
    if n > cfg.max_seq_len:
        raise ValueError(f"sequence length {n} exceeds max_seq_len {cfg.max_seq_len}")
    bad = np.argwhere((ids < 0) | (ids >= cfg.vocab_size))
    if bad.size:
        r, c = bad[0]
        raise IndexError(f"token id {int(ids[r, c])} at batch row {r}, position {c} "
                         f"outside vocab of {cfg.vocab_size}")
    x = T.add(T.embedding_lookup(params["emb.tok"], ids),
              T.embedding_lookup(params["emb.pos"], np.arange(n)))
    x = T.layernorm(x, params["emb.ln.g"], params["emb.ln.b"], cfg.ln_eps)
    x = T.dropout(x, cfg.dropout_p, train, rng)
    maps = []
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        a, attn = _self_attention(x, mask, params, pre, cfg, train, rng)
        maps.append(attn)
        a = T.dropout(a, cfg.dropout_p, train, rng)
        x = T.layernorm(T.add(x, a), params[pre + "ln1.g"], params[pre + "ln1.b"], cfg.ln_eps)
        f = T.gelu(T.linear(x, params[pre + "ff1.w"], params[pre + "ff1.b"]))
        f = T.linear(f, params[pre + "ff2.w"], params[pre + "ff2.b"])
        f = T.dropout(f, cfg.dropout_p, train, rng)
        x = T.layernorm(T.add(x, f), params[pre + "ln2.g"], params[pre + "ln2.b"], cfg.ln_eps)
    out = EncoderOutput(x, mask)
    return (out, maps) if return_attention else out
