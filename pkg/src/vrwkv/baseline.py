"""Causal-attention comparison target for the efficiency benchmark.

A plain pre-norm transformer (MHA + GELU FFN) sized to land within 20% of
the recurrent model's parameter count. Inference keeps a per-layer KV cache
that grows by one position per step, so per-token cost is Θ(t); an
instrumented multiply-accumulate counter exposes that growth analytically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blocks as bl
from .model import ModelConfig
from .vision import gelu

# FFN widening compensates for the recurrent model's extra mixing parameters
ATTN_FFN_EXTRA = 64


@dataclass
class AttentionLayer:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray


@dataclass
class AttentionBaseline:
    cfg: ModelConfig
    d_ffn: int
    embed: np.ndarray
    layers: list
    lnf_gamma: np.ndarray
    lnf_beta: np.ndarray
    head: np.ndarray
    flops: int = 0  # multiply-accumulate counter, updated per step

    @property
    def dtype(self):
        return self.embed.dtype


def init_attention_baseline(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> AttentionBaseline:
    rng = np.random.default_rng(seed)
    D = cfg.d_model
    F = cfg.d_ffn + ATTN_FFN_EXTRA

    def lin(fan_in, fan_out):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, size=(fan_in, fan_out)).astype(dtype)

    layers = [AttentionLayer(
        ln1_gamma=np.ones(D, dtype=dtype), ln1_beta=np.zeros(D, dtype=dtype),
        w_q=lin(D, D), w_k=lin(D, D), w_v=lin(D, D), w_o=lin(D, D),
        ln2_gamma=np.ones(D, dtype=dtype), ln2_beta=np.zeros(D, dtype=dtype),
        w_in=lin(D, F), w_out=lin(F, D)) for _ in range(cfg.n_layers)]
    eb = 1.0 / np.sqrt(D)
    return AttentionBaseline(
        cfg=cfg, d_ffn=F,
        embed=rng.uniform(-eb, eb, size=(cfg.vocab_size, D)).astype(dtype),
        layers=layers,
        lnf_gamma=np.ones(D, dtype=dtype), lnf_beta=np.zeros(D, dtype=dtype),
        head=lin(D, cfg.vocab_size))


def attention_param_count(model: AttentionBaseline) -> int:
    n = model.embed.size + model.head.size + model.lnf_gamma.size + model.lnf_beta.size
    for l in model.layers:
        for arr in (l.ln1_gamma, l.ln1_beta, l.w_q, l.w_k, l.w_v, l.w_o,
                    l.ln2_gamma, l.ln2_beta, l.w_in, l.w_out):
            n += arr.size
    return n


class KvCache:
    """Per-layer growing key/value buffers with doubling capacity."""

    def __init__(self, model: AttentionBaseline):
        cfg = model.cfg
        self.n_layers = cfg.n_layers
        self.d_model = cfg.d_model
        self.itemsize = np.dtype(model.dtype).itemsize
        self.length = 0
        self._cap = 64
        self.k = [np.zeros((self._cap, cfg.d_model), dtype=model.dtype) for _ in range(cfg.n_layers)]
        self.v = [np.zeros((self._cap, cfg.d_model), dtype=model.dtype) for _ in range(cfg.n_layers)]

    def append(self, layer: int, k_row, v_row):
        if self.length == self._cap:
            self._cap *= 2
            self.k = [np.concatenate([a, np.zeros_like(a)]) for a in self.k]
            self.v = [np.concatenate([a, np.zeros_like(a)]) for a in self.v]
        self.k[layer][self.length] = k_row
        self.v[layer][self.length] = v_row

    def advance(self):
        self.length += 1

    @property
    def nbytes(self) -> int:
        """Logical cache size: entries actually holding past positions."""
        return 2 * self.n_layers * self.length * self.d_model * self.itemsize


def attention_baseline_step(model: AttentionBaseline, cache: KvCache, token: int):
    """One-token causal step; the cache grows by one position."""
    cfg = model.cfg
    H, hd = cfg.n_heads, cfg.head_dim
    D = cfg.d_model
    x = model.embed[int(token)].copy()
    t = cache.length + 1  # positions attended after appending this token
    macs = 0
    for i, l in enumerate(model.layers):
        a, _ = bl.layer_norm(x, l.ln1_gamma, l.ln1_beta)
        q = a @ l.w_q
        cache.append(i, a @ l.w_k, a @ l.w_v)
        macs += 3 * D * D
        keys = cache.k[i][:t].reshape(t, H, hd)
        vals = cache.v[i][:t].reshape(t, H, hd)
        scores = np.einsum("thd,hd->ht", keys, q.reshape(H, hd)) / np.sqrt(
            np.array(hd, dtype=x.dtype))
        scores -= scores.max(axis=1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=1, keepdims=True)
        ctx = np.einsum("ht,thd->hd", attn, vals).reshape(-1)
        x = x + ctx @ l.w_o
        macs += 2 * t * D + D * D
        a2, _ = bl.layer_norm(x, l.ln2_gamma, l.ln2_beta)
        x = x + gelu(a2 @ l.w_in) @ l.w_out
        macs += 2 * D * model.d_ffn
    cache.advance()
    hf, _ = bl.layer_norm(x, model.lnf_gamma, model.lnf_beta)
    macs += D * cfg.vocab_size
    model.flops += macs
    return hf @ model.head, cache


def step_flops(model: AttentionBaseline, t: int) -> int:
    """Closed-form MAC count of attention_baseline_step at position t."""
    cfg = model.cfg
    D = cfg.d_model
    per_layer = 3 * D * D + 2 * t * D + D * D + 2 * D * model.d_ffn
    return cfg.n_layers * per_layer + D * cfg.vocab_size
