"""Latency/memory sweep: constant-state recurrence vs growing KV cache.

One continuous generation pass per model; at every checkpoint length the
sweep records the median per-step wall-clock time over the last 64 steps,
cumulative time since the first step, the live state/cache footprint, and an
analytic per-step activation estimate. Runs are single-threaded by design;
thread pinning is the CLI's job.
"""

from __future__ import annotations

import csv
import io
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .baseline import KvCache, attention_baseline_step, init_attention_baseline
from .model import ModelConfig, forward_step, init_model, new_recurrent_state

DEFAULT_LENGTHS = (128, 256, 512, 1024, 2048, 4096, 8192, 16384, 24576)
CSV_HEADER = ["model", "seq_len", "per_token_ns", "cum_ms", "state_bytes", "activation_bytes"]
_WINDOW = 64


@dataclass
class BenchRecord:
    model_kind: str
    seq_len: int
    per_token_latency_ns: int
    cumulative_time_ms: float
    state_bytes: int
    activation_bytes: int

    def row(self):
        return [self.model_kind, self.seq_len, self.per_token_latency_ns,
                f"{self.cumulative_time_ms:.3f}", self.state_bytes, self.activation_bytes]


def _activation_bytes(cfg: ModelConfig, kind: str, t: int, itemsize: int) -> int:
    """Per-step transient buffer estimate from live structure sizes."""
    D, L = cfg.d_model, cfg.n_layers
    fixed = L * (6 * D + cfg.d_ffn + cfg.n_heads * cfg.head_dim ** 2) + cfg.vocab_size
    if kind == "attention":
        fixed += L * 2 * cfg.n_heads * t  # attention rows grow with position
    return fixed * itemsize


def bench_sweep(model_kind: str, lengths=DEFAULT_LENGTHS, cfg: ModelConfig | None = None,
                seed: int = 0, warmup: int = 64, log=None) -> list[BenchRecord]:
    if model_kind not in ("rwkv", "attention"):
        raise ValueError(f"model_kind must be rwkv or attention, got {model_kind!r}")
    lengths = sorted(set(int(x) for x in lengths))
    if any(l < 1 for l in lengths):
        raise ValueError("lengths must be positive")
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(seed)
    max_len = lengths[-1]
    tokens = rng.integers(0, min(cfg.vocab_size, 256), size=max_len + warmup)

    if model_kind == "rwkv":
        model = init_model(cfg, seed=seed, dtype=np.float32)

        def new_state():
            return new_recurrent_state(model)

        def step(state, tok):
            _, state = forward_step(int(tok), state, model)
            return state

        def state_bytes(state):
            return state.nbytes
    else:
        model = init_attention_baseline(cfg, seed=seed, dtype=np.float32)

        def new_state():
            return KvCache(model)

        def step(state, tok):
            _, state = attention_baseline_step(model, state, int(tok))
            return state

        def state_bytes(state):
            return state.nbytes

    warm = new_state()
    for i in range(warmup):
        warm = step(warm, tokens[i])

    itemsize = 4
    state = new_state()
    window = deque(maxlen=_WINDOW)
    records = []
    next_idx = 0
    t_start = time.perf_counter()
    for t in range(1, max_len + 1):
        s0 = time.perf_counter_ns()
        state = step(state, tokens[warmup + t - 1])
        window.append(time.perf_counter_ns() - s0)
        if t == lengths[next_idx]:
            cum_ms = (time.perf_counter() - t_start) * 1e3
            records.append(BenchRecord(
                model_kind=model_kind, seq_len=t,
                per_token_latency_ns=int(np.median(window)),
                cumulative_time_ms=cum_ms,
                state_bytes=state_bytes(state),
                activation_bytes=_activation_bytes(cfg, model_kind, t, itemsize)))
            if log:
                log(f"{model_kind} len={t} per_token={records[-1].per_token_latency_ns}ns "
                    f"state={records[-1].state_bytes}B")
            next_idx += 1
            if next_idx == len(lengths):
                break
    return records


def records_to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def write_csv(records, path):
    with open(path, "w", newline="") as f:
        f.write(records_to_csv(records))
