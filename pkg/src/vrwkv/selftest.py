"""Built-in oracle suite behind the `selftest` CLI subcommand.

A fast subset of the verification battery that needs no test runner: each
check recomputes its expected values from an independent route (closed forms,
brute-force sums, finite differences, round trips) and compares.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from . import checkpoint as ck
from . import kernels as kr
from . import model as md
from . import vision as vi
from .losses import token_weights
from .prompting import PromptLayout, detokenize, tokenize


def check_wkv_equivalence():
    rng = np.random.default_rng(0)
    for _ in range(20):
        T = int(rng.integers(1, 65))
        d = int(rng.integers(1, 9))
        K, V = rng.normal(size=(T, d)), rng.normal(size=(T, d))
        p = kr.HeadParams(u=rng.normal(size=d), w_raw=rng.normal(size=d))
        w_seq = kr.decay_transform(rng.normal(size=(T, d)))
        par_di = kr.wkv_di_parallel(K, V, p)
        par_dd = kr.wkv_dd_parallel(K, V, p.u, w_seq)
        s_di = np.zeros((d, d))
        s_dd = np.zeros((d, d))
        for t in range(T):
            step_di, s_di = kr.wkv_di_step(s_di, K[t], V[t], p)
            step_dd, s_dd = kr.wkv_dd_step(s_dd, K[t], V[t], p.u, w_seq[t])
            assert np.max(np.abs(par_di[t] - step_di)) <= 1e-10
            assert np.max(np.abs(par_dd[t] - step_dd)) <= 1e-10


def check_dd_reduces_to_di():
    rng = np.random.default_rng(1)
    for _ in range(20):
        T = int(rng.integers(1, 65))
        d = int(rng.integers(1, 9))
        K, V = rng.normal(size=(T, d)), rng.normal(size=(T, d))
        p = kr.HeadParams(u=rng.normal(size=d), w_raw=rng.normal(size=d))
        w = np.broadcast_to(kr.decay_transform(p.w_raw), (T, d)).copy()
        diff = np.abs(kr.wkv_dd_parallel(K, V, p.u, w) - kr.wkv_di_parallel(K, V, p))
        assert np.max(diff) <= 1e-12


def check_decay_contraction():
    rng = np.random.default_rng(2)
    d = rng.normal(scale=30.0, size=100_000)
    w = kr.decay_transform(d)
    assert np.all(w > 0.0) and np.all(w < 1.0)


def check_scan_properties():
    for h in range(1, 9):
        for w in range(1, 9):
            fwd = vi.scan_permutation(vi.ScanDirection.FORWARD, h, w)
            bwd = vi.scan_permutation(vi.ScanDirection.BACKWARD, h, w)
            down = vi.scan_permutation(vi.ScanDirection.DOWNWARD, h, w)
            up = vi.scan_permutation(vi.ScanDirection.UPWARD, h, w)
            for perm in (fwd, bwd, down, up):
                assert np.array_equal(np.sort(perm), np.arange(h * w))
                inv = vi.inverse_permutation(perm)
                assert np.array_equal(perm[inv], np.arange(h * w))
            assert np.array_equal(bwd, fwd[::-1])
            assert np.array_equal(up, down[::-1])


def check_loss_weight_golden():
    mask = np.zeros((4, 400), dtype=bool)
    for i, n in enumerate([100, 200, 300, 400]):
        mask[i, :n] = True
    wb = token_weights(mask, "batch")
    assert np.all(wb[mask] == 1.0 / 1000.0)
    ws = token_weights(mask, "sample", group_size=4)
    for i, denom in enumerate([400, 800, 1200, 1600]):
        assert np.all(ws[i][mask[i]] == 1.0 / denom)


def check_tokenizer_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        raw = bytes(rng.integers(0, 256, size=rng.integers(0, 64)).tolist())
        assert detokenize(tokenize(raw)) == raw


def check_checkpoint_round_trip():
    cfg = md.ModelConfig(d_model=16, n_layers=2, n_heads=2, head_dim=8, d_ffn=32,
                         vocab_size=40, d_vision=6, patch=2, lora_rank=2)
    model = md.init_model(cfg, seed=4)
    fd, path = tempfile.mkstemp(suffix=".vrwk")
    os.close(fd)
    try:
        ck.save_checkpoint(path, model)
        loaded, _ = ck.load_checkpoint(path)
        for (n1, a1), (_, a2) in zip(md.named_parameters(model), md.named_parameters(loaded)):
            assert np.array_equal(a1, a2), n1
    finally:
        os.unlink(path)


def check_model_recurrent_vs_parallel():
    cfg = md.ModelConfig(d_model=16, n_layers=2, n_heads=2, head_dim=8, d_ffn=32,
                         vocab_size=40, d_vision=6, patch=2, lora_rank=2, scan_mode="uni")
    model = md.init_model(cfg, seed=5, dtype=np.float64)
    rng = np.random.default_rng(5)
    ids = rng.integers(0, 40, size=24)
    layout = PromptLayout(embeddings=model.embed[ids], image_span=(0, 0),
                          target_span=(len(ids), len(ids)))
    ref = md.forward_parallel(layout, model)
    state = md.new_recurrent_state(model)
    for t, tok in enumerate(ids):
        logits, state = md.forward_step(int(tok), state, model)
        assert np.max(np.abs(logits - ref[t])) <= 1e-8
    assert state.nbytes == cfg.n_layers * (2 * cfg.d_model + cfg.n_heads * cfg.head_dim ** 2) * 8


def check_gradient_spot():
    rng = np.random.default_rng(6)
    d = 5
    x_t, x_prev = rng.normal(size=d), rng.normal(size=d)
    p = kr.ShiftParams(W=rng.normal(size=(d, d)), mu=rng.normal(size=d))
    proj = rng.normal(size=d)
    gi, _ = kr.kernel_backward("token_shift_di", (x_t, x_prev), p, proj)
    h = 1e-5
    for j in range(d):
        xp = x_t.copy()
        xp[j] += h
        up = float(np.sum(proj * kr.token_shift_di(xp, x_prev, p)))
        xp[j] -= 2 * h
        down = float(np.sum(proj * kr.token_shift_di(xp, x_prev, p)))
        fd = (up - down) / (2 * h)
        assert abs(gi["x_t"][j] - fd) <= 1e-4 * max(1.0, abs(fd))


CHECKS = [
    ("wkv parallel/recurrent equivalence", check_wkv_equivalence),
    ("dynamic decay reduces to static", check_dd_reduces_to_di),
    ("decay transform contraction", check_decay_contraction),
    ("scan permutation properties", check_scan_properties),
    ("loss weight golden values", check_loss_weight_golden),
    ("tokenizer round trip", check_tokenizer_round_trip),
    ("checkpoint round trip", check_checkpoint_round_trip),
    ("recurrent vs parallel model", check_model_recurrent_vs_parallel),
    ("analytic gradient spot check", check_gradient_spot),
]


def run_all(log=print) -> int:
    """Run every check; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as e:  # noqa: BLE001 - report and keep going
            failures += 1
            log(f"FAIL {name}: {e!r}")
        else:
            log(f"PASS {name}")
    return failures
