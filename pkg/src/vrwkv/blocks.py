"""Residual blocks: time mixing + channel mixing over the kernel primitives.

Each block runs pre-norm: y = x + time_mix(LN(x)), then y = y + channel_mix(LN(y)).
Two execution forms are provided for every sub-block:

  * step form  — one token at a time against a BlockState (inference);
  * sequence form — whole (B, T, D) tensors with a tape for the analytic
    backward pass (training). The two forms must agree to the package-wide
    equivalence tolerances; tests enforce that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as kr
from .errors import ConfigError, DegenerateNormError, DimensionError
from .kernels import HeadParams, LoraParams, ShiftParams

BRANCHES = ("r", "k", "v", "g")
LN_EPS = 1e-5


@dataclass
class TimeMixParams:
    r: ShiftParams
    k: ShiftParams
    v: ShiftParams
    g: ShiftParams
    heads: HeadParams            # u, w_raw stacked (H, K)
    w_out: np.ndarray            # (D, D)
    hn_gamma: np.ndarray         # (D,)
    hn_beta: np.ndarray          # (D,)
    decay_mu_x: np.ndarray | None = None       # dd only
    decay_ddlerp_lora: LoraParams | None = None
    decay_lora: LoraParams | None = None


@dataclass
class ChannelMixParams:
    r: ShiftParams               # W: (D, D)
    k: ShiftParams               # W: (D, F)
    w_v: np.ndarray              # (F, D)


@dataclass
class BlockParams:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    tm: TimeMixParams
    cm: ChannelMixParams


@dataclass
class BlockState:
    """Constant-size per-block carryover: two shift vectors + WKV matrices."""

    tm_shift: np.ndarray  # (D,)
    cm_shift: np.ndarray  # (D,)
    wkv: np.ndarray       # (H, K, K)

    @property
    def nbytes(self) -> int:
        return self.tm_shift.nbytes + self.cm_shift.nbytes + self.wkv.nbytes

    def copy(self) -> "BlockState":
        return BlockState(self.tm_shift.copy(), self.cm_shift.copy(), self.wkv.copy())


def zero_block_state(d_model: int, n_heads: int, head_dim: int, dtype=np.float32) -> BlockState:
    return BlockState(np.zeros(d_model, dtype=dtype), np.zeros(d_model, dtype=dtype),
                      np.zeros((n_heads, head_dim, head_dim), dtype=dtype))


# ---------------------------------------------------------------------------
# activations / norms


def sigmoid(x):
    # exp(-x) may overflow to inf for very negative x; 1/(1+inf) = 0 is the
    # right limit, so only the warning needs suppressing
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def silu(x):
    return x * sigmoid(x)


def silu_backward(x, g):
    s = sigmoid(x)
    return g * s * (1.0 + x * (1.0 - s))


def layer_norm(x, gamma, beta, eps=LN_EPS):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * istd
    return xhat * gamma + beta, (xhat, istd)


def layer_norm_backward(cache, gamma, g):
    xhat, istd = cache
    gg = g * gamma
    gx = (gg - gg.mean(axis=-1, keepdims=True)
          - xhat * (gg * xhat).mean(axis=-1, keepdims=True)) * istd
    return gx, kr._sum_to(g * xhat, gamma.shape), kr._sum_to(g, gamma.shape)


def head_norm(x, gamma, beta, n_heads, eps=LN_EPS):
    """LayerNorm applied to each head's slice of channels independently."""
    d = x.shape[-1]
    if d % n_heads != 0:
        raise DimensionError(f"d_model {d} not divisible by {n_heads} heads")
    head_dim = d // n_heads
    if head_dim < 2:
        raise DegenerateNormError("head_norm needs at least 2 channels per head")
    shaped = x.reshape(x.shape[:-1] + (n_heads, head_dim))
    y, cache = layer_norm(shaped, gamma.reshape(n_heads, head_dim),
                          beta.reshape(n_heads, head_dim), eps)
    return y.reshape(x.shape), (cache, shaped.shape)


def head_norm_backward(cache, gamma, n_heads, g):
    inner_cache, shaped_shape = cache
    head_dim = shaped_shape[-1]
    gx, dgamma, dbeta = layer_norm_backward(inner_cache, gamma.reshape(n_heads, head_dim),
                                            g.reshape(shaped_shape))
    return gx.reshape(g.shape), dgamma.reshape(-1), dbeta.reshape(-1)


# ---------------------------------------------------------------------------
# step forms (inference)


def _require_variant(p: TimeMixParams, variant: str):
    if variant == "di":
        for name in BRANCHES:
            if getattr(p, name).mu is None:
                raise ConfigError(f"di time mix needs mu on branch {name}")
    elif variant == "dd":
        for name in BRANCHES:
            br = getattr(p, name)
            if br.lora is None or br.mu_x is None:
                raise ConfigError(f"dd time mix needs mu_x+lora on branch {name}")
        if p.decay_lora is None or p.decay_ddlerp_lora is None or p.decay_mu_x is None:
            raise ConfigError("dd time mix needs the decay branch parameters")
    else:
        raise ConfigError(f"unknown recurrence variant {variant!r}")


def time_mix_forward(x_t, state: BlockState, p: TimeMixParams, variant: str):
    """One token through the time-mixing sub-block; returns (o_t, state')."""
    _require_variant(p, variant)
    n_heads, head_dim = state.wkv.shape[0], state.wkv.shape[1]
    prev = state.tm_shift
    shift = kr.token_shift_di if variant == "di" else kr.token_shift_dd
    r = shift(x_t, prev, p.r).reshape(n_heads, head_dim)
    k = shift(x_t, prev, p.k).reshape(n_heads, head_dim)
    v = shift(x_t, prev, p.v).reshape(n_heads, head_dim)
    g = shift(x_t, prev, p.g)

    if variant == "di":
        wkv, new_wkv = kr.wkv_di_step(state.wkv, k, v, p.heads)
    else:
        w = kr.dynamic_decay(x_t, prev, p.decay_mu_x, p.decay_ddlerp_lora,
                             p.decay_lora).reshape(n_heads, head_dim)
        wkv, new_wkv = kr.wkv_dd_step(state.wkv, k, v, p.heads.u, w)
    y = np.einsum("hk,hkv->hv", r, wkv).reshape(-1)

    hn, _ = head_norm(y, p.hn_gamma, p.hn_beta, n_heads)
    o = (silu(g) * hn) @ p.w_out
    return o, BlockState(np.array(x_t, copy=True), state.cm_shift, new_wkv)


def channel_mix_forward(x_t, state: BlockState, p: ChannelMixParams):
    """One token through the channel-mixing sub-block; returns (y_t, state')."""
    prev = state.cm_shift
    r = kr.token_shift_di(x_t, prev, p.r)
    k = kr.token_shift_di(x_t, prev, p.k)
    y = sigmoid(r) * (np.square(np.maximum(k, 0.0)) @ p.w_v)
    return y, BlockState(state.tm_shift, np.array(x_t, copy=True), state.wkv)


def block_forward(x_t, state: BlockState, bp: BlockParams, variant: str):
    """One token through the full pre-norm residual block."""
    a1, _ = layer_norm(x_t, bp.ln1_gamma, bp.ln1_beta)
    tm, state = time_mix_forward(a1, state, bp.tm, variant)
    x_t = x_t + tm
    a2, _ = layer_norm(x_t, bp.ln2_gamma, bp.ln2_beta)
    cm, state = channel_mix_forward(a2, state, bp.cm)
    return x_t + cm, state


# ---------------------------------------------------------------------------
# sequence forms (training)


def _shift_seq(x, sh0):
    """Previous-token view of x: row t sees row t-1, row 0 sees the carry."""
    return np.concatenate([sh0[:, None, :], x[:, :-1, :]], axis=1)


def _heads_view(x, n_heads):
    """(B, T, D) -> (B, H, T, K), contiguous for the scan's per-step slices."""
    B, T, D = x.shape
    return np.ascontiguousarray(x.reshape(B, T, n_heads, D // n_heads).transpose(0, 2, 1, 3))


def _heads_unview(x4):
    B, H, T, K = x4.shape
    return x4.transpose(0, 2, 1, 3).reshape(B, T, H * K)


def time_mix_seq_forward(x, sh0, S0, p: TimeMixParams, variant: str, need_tape=True):
    """Sequence-parallel time mix. x (B,T,D), sh0 (B,D), S0 (B,H,K,K).

    Returns (o, sh_final, S_final, tape).
    """
    _require_variant(p, variant)
    B, T, D = x.shape
    n_heads = S0.shape[1]
    xs = _shift_seq(x, sh0)
    tape = {"x": x, "xs": xs} if need_tape else None

    branch_out = {}
    if variant == "di":
        for name in BRANCHES:
            br = getattr(p, name)
            mixed = br.mu * x + (1.0 - br.mu) * xs
            branch_out[name] = mixed @ br.W
            if need_tape:
                tape[f"mixed_{name}"] = mixed
        w4 = np.broadcast_to(kr.decay_transform(p.heads.w_raw)[None, :, None, :],
                             (B, n_heads, T, D // n_heads))
    else:
        for name in BRANCHES:
            br = getattr(p, name)
            inner = x + (xs - x) * br.mu_x
            h = np.tanh(inner @ br.lora.A)
            gate = br.lora.lam + h @ br.lora.B
            mixed = x + (xs - x) * gate
            branch_out[name] = mixed @ br.W
            if need_tape:
                tape[f"inner_{name}"] = inner
                tape[f"h_{name}"] = h
                tape[f"gate_{name}"] = gate
                tape[f"mixed_{name}"] = mixed
        inner_d = x + (xs - x) * p.decay_mu_x
        h_d = np.tanh(inner_d @ p.decay_ddlerp_lora.A)
        gate_d = p.decay_ddlerp_lora.lam + h_d @ p.decay_ddlerp_lora.B
        mixed_d = x + (xs - x) * gate_d
        h_d2 = np.tanh(mixed_d @ p.decay_lora.A)
        dvec = p.decay_lora.lam + h_d2 @ p.decay_lora.B
        w4 = _heads_view(kr.decay_transform(dvec), n_heads)
        if need_tape:
            tape.update(inner_d=inner_d, h_d=h_d, gate_d=gate_d, mixed_d=mixed_d,
                        h_d2=h_d2, dvec=dvec)

    r4 = _heads_view(branch_out["r"], n_heads)
    k4 = _heads_view(branch_out["k"], n_heads)
    v4 = _heads_view(branch_out["v"], n_heads)
    y4, S_fin, states = kr.wkv_readout_scan(r4, k4, v4, p.heads.u, w4, S0, need_tape=need_tape)
    y = _heads_unview(y4)
    hn, hn_cache = head_norm(y, p.hn_gamma, p.hn_beta, n_heads)
    g_br = branch_out["g"]
    gated = silu(g_br) * hn
    o = gated @ p.w_out
    if need_tape:
        tape.update(r4=r4, k4=k4, v4=v4, w4=w4, states=states, S_fin=S_fin,
                    hn=hn, hn_cache=hn_cache, g=g_br, gated=gated)
    return o, x[:, -1, :].copy(), S_fin, tape


def time_mix_seq_backward(g_o, p: TimeMixParams, variant: str, n_heads, tape,
                          grads: dict, prefix: str, g_S_fin=None):
    """Backward of time_mix_seq_forward; returns (g_x, g_sh0, g_S0)."""
    x, xs = tape["x"], tape["xs"]

    def acc(name, val):
        key = prefix + name
        if key in grads:
            grads[key] += val
        else:
            grads[key] = val

    g_gated = g_o @ p.w_out.T
    acc("w_out", kr._stacked_outer(tape["gated"], g_o))
    g_hn = g_gated * silu(tape["g"])
    g_gbranch = silu_backward(tape["g"], g_gated * tape["hn"])
    g_y, d_hng, d_hnb = head_norm_backward(tape["hn_cache"], p.hn_gamma, n_heads, g_hn)
    acc("hn_gamma", d_hng)
    acc("hn_beta", d_hnb)

    g_y4 = _heads_view(g_y, n_heads)
    g_r4, g_k4, g_v4, g_u, g_w4, g_S0 = kr.wkv_readout_scan_backward(
        tape["r4"], tape["k4"], tape["v4"], p.heads.u, tape["w4"],
        tape["states"], tape["S_fin"], g_y4, g_s_final=g_S_fin)
    acc("heads.u", kr._sum_to(g_u, p.heads.u.shape))

    g_branch = {"r": _heads_unview(g_r4), "k": _heads_unview(g_k4),
                "v": _heads_unview(g_v4), "g": g_gbranch}
    g_x = np.zeros_like(x)
    g_xs = np.zeros_like(xs)

    if variant == "di":
        for name in BRANCHES:
            br = getattr(p, name)
            g_mixed = g_branch[name] @ br.W.T
            acc(f"{name}.W", kr._stacked_outer(tape[f"mixed_{name}"], g_branch[name]))
            acc(f"{name}.mu", kr._sum_to(g_mixed * (x - xs), br.mu.shape))
            g_x += g_mixed * br.mu
            g_xs += g_mixed * (1.0 - br.mu)
        g_w = g_w4.sum(axis=(0, 2))  # (H, K) summed over batch+time
        acc("heads.w_raw", kr.decay_transform_backward(p.heads.w_raw, g_w))
    else:
        def ddlerp_bwd(g_mixed, inner, h, gate, lora: LoraParams, mu_x, lam_key, a_key, b_key, mux_key):
            g_gate = g_mixed * (xs - x)
            acc(lam_key, kr._sum_to(g_gate, lora.lam.shape))
            acc(b_key, kr._stacked_outer(h, g_gate))
            g_h = g_gate @ lora.B.T
            g_pre = g_h * (1.0 - h * h)
            acc(a_key, kr._stacked_outer(inner, g_pre))
            g_inner = g_pre @ lora.A.T
            acc(mux_key, kr._sum_to(g_inner * (xs - x), mu_x.shape))
            gx = g_mixed * (1.0 - gate) + g_inner * (1.0 - mu_x)
            gxs = g_mixed * gate + g_inner * mu_x
            return gx, gxs

        for name in BRANCHES:
            br = getattr(p, name)
            g_mixed = g_branch[name] @ br.W.T
            acc(f"{name}.W", kr._stacked_outer(tape[f"mixed_{name}"], g_branch[name]))
            gx, gxs = ddlerp_bwd(g_mixed, tape[f"inner_{name}"], tape[f"h_{name}"],
                                 tape[f"gate_{name}"], br.lora, br.mu_x,
                                 f"{name}.lora.lam", f"{name}.lora.A", f"{name}.lora.B",
                                 f"{name}.mu_x")
            g_x += gx
            g_xs += gxs

        g_w = _heads_unview(g_w4)
        g_dvec = kr.decay_transform_backward(tape["dvec"], g_w)
        acc("decay_lora.lam", kr._sum_to(g_dvec, p.decay_lora.lam.shape))
        acc("decay_lora.B", kr._stacked_outer(tape["h_d2"], g_dvec))
        g_h2 = g_dvec @ p.decay_lora.B.T
        g_pre2 = g_h2 * (1.0 - tape["h_d2"] ** 2)
        acc("decay_lora.A", kr._stacked_outer(tape["mixed_d"], g_pre2))
        g_mixed_d = g_pre2 @ p.decay_lora.A.T
        gx, gxs = ddlerp_bwd(g_mixed_d, tape["inner_d"], tape["h_d"], tape["gate_d"],
                             p.decay_ddlerp_lora, p.decay_mu_x,
                             "decay_ddlerp_lora.lam", "decay_ddlerp_lora.A",
                             "decay_ddlerp_lora.B", "decay_mu_x")
        g_x += gx
        g_xs += gxs

    # undo the shift: xs[:, t] is x[:, t-1], xs[:, 0] is the carry
    g_x[:, :-1, :] += g_xs[:, 1:, :]
    return g_x, g_xs[:, 0, :], g_S0


def channel_mix_seq_forward(x, sh0, p: ChannelMixParams, need_tape=True):
    """Sequence-parallel channel mix; returns (y, sh_final, tape)."""
    xs = _shift_seq(x, sh0)
    mixed_r = p.r.mu * x + (1.0 - p.r.mu) * xs
    mixed_k = p.k.mu * x + (1.0 - p.k.mu) * xs
    rpre = mixed_r @ p.r.W
    kpre = mixed_k @ p.k.W
    krelu = np.maximum(kpre, 0.0)
    hidden = np.square(krelu)
    vout = hidden @ p.w_v
    sig = sigmoid(rpre)
    y = sig * vout
    tape = None
    if need_tape:
        tape = dict(x=x, xs=xs, mixed_r=mixed_r, mixed_k=mixed_k, rpre=rpre,
                    krelu=krelu, hidden=hidden, vout=vout, sig=sig)
    return y, x[:, -1, :].copy(), tape


def channel_mix_seq_backward(g_y, p: ChannelMixParams, tape, grads: dict, prefix: str):
    x, xs = tape["x"], tape["xs"]

    def acc(name, val):
        key = prefix + name
        if key in grads:
            grads[key] += val
        else:
            grads[key] = val

    sig, vout = tape["sig"], tape["vout"]
    g_sig = g_y * vout
    g_vout = g_y * sig
    g_rpre = g_sig * sig * (1.0 - sig)
    acc("w_v", kr._stacked_outer(tape["hidden"], g_vout))
    g_hidden = g_vout @ p.w_v.T
    g_kpre = 2.0 * tape["krelu"] * g_hidden
    acc("r.W", kr._stacked_outer(tape["mixed_r"], g_rpre))
    acc("k.W", kr._stacked_outer(tape["mixed_k"], g_kpre))
    g_mixed_r = g_rpre @ p.r.W.T
    g_mixed_k = g_kpre @ p.k.W.T
    acc("r.mu", kr._sum_to(g_mixed_r * (x - xs), p.r.mu.shape))
    acc("k.mu", kr._sum_to(g_mixed_k * (x - xs), p.k.mu.shape))
    g_x = g_mixed_r * p.r.mu + g_mixed_k * p.k.mu
    g_xs = g_mixed_r * (1.0 - p.r.mu) + g_mixed_k * (1.0 - p.k.mu)
    g_x[:, :-1, :] += g_xs[:, 1:, :]
    return g_x, g_xs[:, 0, :]


def block_seq_forward(x, tm_sh0, cm_sh0, S0, bp: BlockParams, variant: str, need_tape=True):
    """Whole residual block over a sequence; returns (y, states, tape)."""
    a1, ln1_cache = layer_norm(x, bp.ln1_gamma, bp.ln1_beta)
    tm, tm_sh, S_fin, tm_tape = time_mix_seq_forward(a1, tm_sh0, S0, bp.tm, variant, need_tape)
    x1 = x + tm
    a2, ln2_cache = layer_norm(x1, bp.ln2_gamma, bp.ln2_beta)
    cm, cm_sh, cm_tape = channel_mix_seq_forward(a2, cm_sh0, bp.cm, need_tape)
    y = x1 + cm
    tape = None
    if need_tape:
        tape = dict(ln1_cache=ln1_cache, ln2_cache=ln2_cache, tm_tape=tm_tape, cm_tape=cm_tape)
    return y, (tm_sh, cm_sh, S_fin), tape


def block_seq_backward(g_y, bp: BlockParams, variant: str, n_heads, tape, grads, prefix,
                       g_states=None):
    """Backward of block_seq_forward; returns (g_x, g_tm_sh0, g_cm_sh0, g_S0)."""
    g_tm_sh_fin = g_cm_sh_fin = g_S_fin = None
    if g_states is not None:
        g_tm_sh_fin, g_cm_sh_fin, g_S_fin = g_states

    g_cm, g_cm_sh0 = channel_mix_seq_backward(g_y, bp.cm, tape["cm_tape"], grads, prefix + "cm.")
    if g_cm_sh_fin is not None:
        g_cm[:, -1, :] += g_cm_sh_fin
    g_a2, d_g2, d_b2 = layer_norm_backward(tape["ln2_cache"], bp.ln2_gamma, g_cm)
    _acc(grads, prefix + "ln2_gamma", d_g2)
    _acc(grads, prefix + "ln2_beta", d_b2)
    g_x1 = g_y + g_a2

    g_tm, g_tm_sh0, g_S0 = time_mix_seq_backward(g_x1, bp.tm, variant, n_heads,
                                                 tape["tm_tape"], grads, prefix + "tm.",
                                                 g_S_fin=g_S_fin)
    if g_tm_sh_fin is not None:
        g_tm[:, -1, :] += g_tm_sh_fin
    g_a1, d_g1, d_b1 = layer_norm_backward(tape["ln1_cache"], bp.ln1_gamma, g_tm)
    _acc(grads, prefix + "ln1_gamma", d_g1)
    _acc(grads, prefix + "ln1_beta", d_b1)
    return g_x1 + g_a1, g_tm_sh0, g_cm_sh0, g_S0


def _acc(grads, key, val):
    if key in grads:
        grads[key] += val
    else:
        grads[key] = val


# ---------------------------------------------------------------------------
# initialization


def init_lora(rng, d, rank, lam=None, dtype=np.float32):
    lam = np.zeros(d, dtype=dtype) if lam is None else np.asarray(lam, dtype=dtype)
    bound = 1.0 / np.sqrt(d)
    A = rng.uniform(-bound, bound, size=(d, rank)).astype(dtype)
    B = np.zeros((rank, d), dtype=dtype)  # gate starts exactly at lam
    return LoraParams(lam=lam, A=A, B=B)


def _uniform_w(rng, fan_in, fan_out, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def init_time_mix(rng, d_model, n_heads, lora_rank, variant, dtype=np.float32) -> TimeMixParams:
    head_dim = d_model // n_heads
    ramp = (np.arange(d_model, dtype=np.float64) / d_model).astype(dtype)

    def branch(offset):
        mix = np.clip(ramp + offset, 0.0, 1.0).astype(dtype)
        if variant == "di":
            return ShiftParams(W=_uniform_w(rng, d_model, d_model, dtype), mu=mix)
        return ShiftParams(W=_uniform_w(rng, d_model, d_model, dtype), mu_x=mix,
                           lora=init_lora(rng, d_model, lora_rank, lam=1.0 - mix, dtype=dtype))

    # decays spread over (0.3, 0.99) across channels; bonus small positive
    decay_targets = np.linspace(0.3, 0.99, d_model)
    w_raw = np.log(-np.log(decay_targets)).astype(dtype).reshape(n_heads, head_dim)
    u = np.linspace(0.05, 0.5, d_model).astype(dtype).reshape(n_heads, head_dim)

    tm = TimeMixParams(
        r=branch(0.0), k=branch(0.05), v=branch(0.1), g=branch(0.15),
        heads=HeadParams(u=u, w_raw=w_raw),
        w_out=_uniform_w(rng, d_model, d_model, dtype),
        hn_gamma=np.ones(d_model, dtype=dtype), hn_beta=np.zeros(d_model, dtype=dtype))
    if variant == "dd":
        tm.decay_mu_x = np.clip(ramp + 0.2, 0.0, 1.0).astype(dtype)
        tm.decay_ddlerp_lora = init_lora(rng, d_model, lora_rank, lam=1.0 - ramp, dtype=dtype)
        tm.decay_lora = init_lora(rng, d_model, lora_rank,
                                  lam=w_raw.reshape(-1).copy(), dtype=dtype)
    return tm


def init_channel_mix(rng, d_model, d_ffn, dtype=np.float32) -> ChannelMixParams:
    ramp = (np.arange(d_model, dtype=np.float64) / d_model).astype(dtype)
    return ChannelMixParams(
        r=ShiftParams(W=_uniform_w(rng, d_model, d_model, dtype), mu=ramp.copy()),
        k=ShiftParams(W=_uniform_w(rng, d_model, d_ffn, dtype), mu=np.clip(ramp + 0.1, 0.0, 1.0)),
        w_v=_uniform_w(rng, d_ffn, d_model, dtype))


def init_block(rng, d_model, n_heads, d_ffn, lora_rank, variant, dtype=np.float32) -> BlockParams:
    ones = np.ones(d_model, dtype=dtype)
    zeros = np.zeros(d_model, dtype=dtype)
    return BlockParams(ln1_gamma=ones.copy(), ln1_beta=zeros.copy(),
                       ln2_gamma=ones.copy(), ln2_beta=zeros.copy(),
                       tm=init_time_mix(rng, d_model, n_heads, lora_rank, variant, dtype),
                       cm=init_channel_mix(rng, d_model, d_ffn, dtype))
