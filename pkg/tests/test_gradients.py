"""Analytic backward vs central finite differences for every kernel op."""

import numpy as np
import pytest

from vrwkv import kernels as kr
from fd import assert_grads_close, finite_difference


def rand_lora(rng, d, r=2):
    return kr.LoraParams(lam=rng.normal(size=d), A=rng.normal(size=(d, r)) * 0.5,
                         B=rng.normal(size=(r, d)) * 0.5)


def proj_loss(proj):
    return lambda out: float(np.sum(proj * out))


N_INSTANCES = 25  # per op here; the acceptance suite runs the full 100


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_token_shift_di_grads(seed):
    rng = np.random.default_rng(100 + seed)
    d, d_out = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    x_t, x_prev = rng.normal(size=d), rng.normal(size=d)
    mu, W = rng.normal(size=d), rng.normal(size=(d, d_out))
    proj = rng.normal(size=d_out)

    def f(x_t, x_prev, mu, W):
        return float(np.sum(proj * kr.token_shift_di(x_t, x_prev, kr.ShiftParams(W=W, mu=mu))))

    fd = finite_difference(f, [x_t, x_prev, mu, W])
    gi, gp = kr.kernel_backward("token_shift_di", (x_t, x_prev), kr.ShiftParams(W=W, mu=mu), proj)
    for got, want, name in [(gi["x_t"], fd[0], "x_t"), (gi["x_prev"], fd[1], "x_prev"),
                            (gp["mu"], fd[2], "mu"), (gp["W"], fd[3], "W")]:
        assert_grads_close(got, want, label=name)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_lora_eval_grads(seed):
    rng = np.random.default_rng(200 + seed)
    d, r = int(rng.integers(1, 9)), int(rng.integers(1, 4))
    x = rng.normal(size=d)
    p = rand_lora(rng, d, r)
    proj = rng.normal(size=d)

    def f(x, lam, A, B):
        return float(np.sum(proj * kr.lora_eval(x, kr.LoraParams(lam=lam, A=A, B=B))))

    fd = finite_difference(f, [x, p.lam, p.A, p.B])
    gi, gp = kr.kernel_backward("lora_eval", (x,), p, proj)
    for got, want, name in [(gi["x"], fd[0], "x"), (gp["lam"], fd[1], "lam"),
                            (gp["A"], fd[2], "A"), (gp["B"], fd[3], "B")]:
        assert_grads_close(got, want, label=name)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_ddlerp_grads(seed):
    rng = np.random.default_rng(300 + seed)
    d = int(rng.integers(1, 9))
    a, b, mu_x = rng.normal(size=d), rng.normal(size=d), rng.normal(size=d)
    p = rand_lora(rng, d)
    proj = rng.normal(size=d)

    def f(a, b, mu_x, lam, A, B):
        return float(np.sum(proj * kr.ddlerp(a, b, mu_x, kr.LoraParams(lam=lam, A=A, B=B))))

    fd = finite_difference(f, [a, b, mu_x, p.lam, p.A, p.B])
    gi, gp = kr.kernel_backward("ddlerp", (a, b, mu_x), p, proj)
    for got, want, name in [(gi["a"], fd[0], "a"), (gi["b"], fd[1], "b"), (gp["mu_x"], fd[2], "mu_x"),
                            (gp["lam"], fd[3], "lam"), (gp["A"], fd[4], "A"), (gp["B"], fd[5], "B")]:
        assert_grads_close(got, want, label=name)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_token_shift_dd_grads(seed):
    rng = np.random.default_rng(400 + seed)
    d, d_out = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    x_t, x_prev = rng.normal(size=d), rng.normal(size=d)
    mu_x, W = rng.normal(size=d), rng.normal(size=(d, d_out))
    p = rand_lora(rng, d)
    proj = rng.normal(size=d_out)

    def f(x_t, x_prev, mu_x, lam, A, B, W):
        sp = kr.ShiftParams(W=W, mu_x=mu_x, lora=kr.LoraParams(lam=lam, A=A, B=B))
        return float(np.sum(proj * kr.token_shift_dd(x_t, x_prev, sp)))

    fd = finite_difference(f, [x_t, x_prev, mu_x, p.lam, p.A, p.B, W])
    sp = kr.ShiftParams(W=W, mu_x=mu_x, lora=p)
    gi, gp = kr.kernel_backward("token_shift_dd", (x_t, x_prev), sp, proj)
    for got, want, name in [(gi["x_t"], fd[0], "x_t"), (gi["x_prev"], fd[1], "x_prev"),
                            (gp["mu_x"], fd[2], "mu_x"), (gp["lam"], fd[3], "lam"),
                            (gp["A"], fd[4], "A"), (gp["B"], fd[5], "B"), (gp["W"], fd[6], "W")]:
        assert_grads_close(got, want, label=name)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_decay_transform_grads(seed):
    rng = np.random.default_rng(500 + seed)
    d = rng.normal(size=int(rng.integers(1, 16)))
    proj = rng.normal(size=d.shape)
    fd = finite_difference(lambda d: float(np.sum(proj * kr.decay_transform(d))), [d])
    gi, _ = kr.kernel_backward("decay_transform", (d,), None, proj)
    assert_grads_close(gi["d"], fd[0], label="d")


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_dynamic_decay_grads(seed):
    rng = np.random.default_rng(600 + seed)
    d = int(rng.integers(1, 9))
    x_t, x_prev, mu_x = rng.normal(size=d), rng.normal(size=d), rng.normal(size=d)
    p1, p2 = rand_lora(rng, d), rand_lora(rng, d)
    proj = rng.normal(size=d)

    def f(x_t, x_prev, mu_x, l1, A1, B1, l2, A2, B2):
        out = kr.dynamic_decay(x_t, x_prev, mu_x, kr.LoraParams(l1, A1, B1), kr.LoraParams(l2, A2, B2))
        return float(np.sum(proj * out))

    fd = finite_difference(f, [x_t, x_prev, mu_x, p1.lam, p1.A, p1.B, p2.lam, p2.A, p2.B])
    gi, gp = kr.kernel_backward("dynamic_decay", (x_t, x_prev), (mu_x, p1, p2), proj)
    pairs = [(gi["x_t"], fd[0], "x_t"), (gi["x_prev"], fd[1], "x_prev"), (gp["mu_x"], fd[2], "mu_x"),
             (gp["ddlerp_lora"]["lam"], fd[3], "l1"), (gp["ddlerp_lora"]["A"], fd[4], "A1"),
             (gp["ddlerp_lora"]["B"], fd[5], "B1"),
             (gp["decay_lora"]["lam"], fd[6], "l2"), (gp["decay_lora"]["A"], fd[7], "A2"),
             (gp["decay_lora"]["B"], fd[8], "B2")]
    for got, want, name in pairs:
        assert_grads_close(got, want, label=name)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_wkv_di_step_grads(seed):
    rng = np.random.default_rng(700 + seed)
    d = int(rng.integers(1, 9))
    state = rng.normal(size=(d, d))
    k, v = rng.normal(size=d), rng.normal(size=d)
    u, w_raw = rng.normal(size=d), rng.normal(size=d)
    p_wkv, p_state = rng.normal(size=(d, d)), rng.normal(size=(d, d))

    def f(state, k, v, u, w_raw):
        wkv, nxt = kr.wkv_di_step(state, k, v, kr.HeadParams(u=u, w_raw=w_raw))
        return float(np.sum(p_wkv * wkv) + np.sum(p_state * nxt))

    fd = finite_difference(f, [state, k, v, u, w_raw])
    gi, gp = kr.kernel_backward("wkv_di_step", (state, k, v),
                                kr.HeadParams(u=u, w_raw=w_raw), (p_wkv, p_state))
    for got, want, name in [(gi["state"], fd[0], "state"), (gi["k_t"], fd[1], "k"),
                            (gi["v_t"], fd[2], "v"), (gp["u"], fd[3], "u"),
                            (gp["w_raw"], fd[4], "w_raw")]:
        assert_grads_close(got, want, label=name)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_wkv_dd_step_grads(seed):
    rng = np.random.default_rng(800 + seed)
    d = int(rng.integers(1, 9))
    state = rng.normal(size=(d, d))
    k, v, u = rng.normal(size=d), rng.normal(size=d), rng.normal(size=d)
    w_t = rng.uniform(0.05, 0.95, size=d)
    p_wkv, p_state = rng.normal(size=(d, d)), rng.normal(size=(d, d))

    def f(state, k, v, u, w_t):
        wkv, nxt = kr.wkv_dd_step(state, k, v, u, w_t)
        return float(np.sum(p_wkv * wkv) + np.sum(p_state * nxt))

    fd = finite_difference(f, [state, k, v, u, w_t])
    gi, gp = kr.kernel_backward("wkv_dd_step", (state, k, v, u, w_t), None, (p_wkv, p_state))
    for got, want, name in [(gi["state"], fd[0], "state"), (gi["k_t"], fd[1], "k"),
                            (gi["v_t"], fd[2], "v"), (gp["u"], fd[3], "u"),
                            (gi["w_t"], fd[4], "w_t")]:
        assert_grads_close(got, want, label=name)


@pytest.mark.parametrize("seed", range(8))
def test_readout_scan_grads(seed):
    rng = np.random.default_rng(900 + seed)
    H, T, d = 2, 6, 3
    r, k, v = (rng.normal(size=(H, T, d)) for _ in range(3))
    u = rng.normal(size=(H, d))
    w = rng.uniform(0.1, 0.9, size=(H, T, d))
    s0 = rng.normal(size=(H, d, d))
    proj = rng.normal(size=(H, T, d))
    p_fin = rng.normal(size=(H, d, d))

    def f(r, k, v, u, w, s0):
        y, s_fin, _ = kr.wkv_readout_scan(r, k, v, u, w, s0)
        return float(np.sum(proj * y) + np.sum(p_fin * s_fin))

    fd = finite_difference(f, [r, k, v, u, w, s0])
    y, s_fin, states = kr.wkv_readout_scan(r, k, v, u, w, s0, need_tape=True)
    g_r, g_k, g_v, g_u, g_w, g_s0 = kr.wkv_readout_scan_backward(
        r, k, v, u, w, states, s_fin, proj, g_s_final=p_fin)
    for got, want, name in [(g_r, fd[0], "r"), (g_k, fd[1], "k"), (g_v, fd[2], "v"),
                            (g_u, fd[3], "u"), (g_w, fd[4], "w"), (g_s0, fd[5], "s0")]:
        assert_grads_close(got, want, label=name)
