"""Numerical primitives of linear-RNN time mixing.

Everything here is a pure function of numpy arrays. Vectors are 1-D arrays,
sequences are (T, D), and per-head WKV state is a (K, V) outer-product
accumulator. All operations broadcast over leading dimensions, so the same
code serves a single head, a stack of heads (H, ...), or a training batch
(B, H, ...).

Conventions (fixed for the whole package):
  * k, v, r, g are row vectors; outer(k, v) is the (K, V) matrix k[i]*v[j].
  * The recurrent state starts at zero and the previous-input shift vector
    is zero at the first step.
  * Decay factors pass through exp(-exp(.)), which maps any finite input
    strictly into (0, 1), so the state update is always a contraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractionError, DimensionError, UnsupportedOpError


@dataclass
class LoraParams:
    """Low-rank gate: base vector plus a tanh bottleneck offset."""

    lam: np.ndarray  # (D,)
    A: np.ndarray    # (D, r)
    B: np.ndarray    # (r, D)


@dataclass
class HeadParams:
    """Per-head WKV parameters: first-occurrence bonus and raw decay.

    Arrays are (K,) for a single head; stacked (H, K) arrays are accepted
    everywhere through broadcasting.
    """

    u: np.ndarray
    w_raw: np.ndarray


@dataclass
class ShiftParams:
    """Token-shift branch parameters.

    The data-independent variant uses `mu`; the data-dependent variant uses
    `mu_x` plus `lora`. `W` is the branch projection, (D, D_out).
    """

    W: np.ndarray
    mu: np.ndarray | None = None
    mu_x: np.ndarray | None = None
    lora: LoraParams | None = None


@dataclass
class WkvState:
    """Outer-product accumulator; shape is fixed for a session's lifetime."""

    S: np.ndarray  # (..., K, V)

    @property
    def nbytes(self) -> int:
        return self.S.nbytes


# ---------------------------------------------------------------------------
# forward primitives


def decay_transform(d: np.ndarray) -> np.ndarray:
    """exp(-exp(d)): maps finite reals strictly into (0, 1), monotone down.

    Saturated values are nudged to the nearest representable number inside
    the open interval, so downstream contraction checks hold for any finite
    input even where the exact result would round to 0.0 or 1.0.
    """
    d = np.asarray(d)
    with np.errstate(over="ignore", under="ignore"):
        w = np.exp(-np.exp(d))
    fi = np.finfo(w.dtype)
    return np.clip(w, fi.tiny, np.nextafter(w.dtype.type(1.0), w.dtype.type(0.0)))


def token_shift_di(x_t: np.ndarray, x_prev: np.ndarray, p: ShiftParams) -> np.ndarray:
    """Static interpolation of current and previous inputs, then project."""
    if p.lora is not None:
        raise ConfigError("data-independent token shift takes no lora")
    if x_t.shape != x_prev.shape or x_t.shape[-1] != p.W.shape[0]:
        raise DimensionError(f"token_shift_di shapes: {x_t.shape}, {x_prev.shape}, W {p.W.shape}")
    return (p.mu * x_t + (1.0 - p.mu) * x_prev) @ p.W


def lora_eval(x: np.ndarray, p: LoraParams) -> np.ndarray:
    """lam + tanh(x A) B."""
    if x.shape[-1] != p.A.shape[0]:
        raise DimensionError(f"lora_eval: x {x.shape} vs A {p.A.shape}")
    return p.lam + np.tanh(x @ p.A) @ p.B


def ddlerp(a: np.ndarray, b: np.ndarray, mu_x: np.ndarray, p: LoraParams) -> np.ndarray:
    """Interpolate a toward b by a gate that itself depends on the inputs.

    The gate sees the statically premixed point a + (b-a)*mu_x, so the
    interpolation ratio reacts to both endpoints. a == b is an exact fixed
    point for any parameters.
    """
    if a.shape != b.shape:
        raise DimensionError(f"ddlerp endpoints disagree: {a.shape} vs {b.shape}")
    gate = lora_eval(a + (b - a) * mu_x, p)
    return a + (b - a) * gate


def token_shift_dd(x_t: np.ndarray, x_prev: np.ndarray, p: ShiftParams) -> np.ndarray:
    """Input-conditioned interpolation of current/previous inputs, then project."""
    if p.lora is None:
        raise ConfigError("data-dependent token shift requires a lora")
    if x_t.shape[-1] != p.W.shape[0]:
        raise DimensionError(f"token_shift_dd: x {x_t.shape} vs W {p.W.shape}")
    return ddlerp(x_t, x_prev, p.mu_x, p.lora) @ p.W


def dynamic_decay(
    x_t: np.ndarray,
    x_prev: np.ndarray,
    mu_x: np.ndarray,
    ddlerp_lora: LoraParams,
    decay_lora: LoraParams,
) -> np.ndarray:
    """Per-channel decay conditioned on a token-shifted view of the input."""
    d = lora_eval(ddlerp(x_t, x_prev, mu_x, ddlerp_lora), decay_lora)
    return decay_transform(d)


def _outer(k: np.ndarray, v: np.ndarray) -> np.ndarray:
    return k[..., :, None] * v[..., None, :]


def wkv_di_step(state: np.ndarray, k_t: np.ndarray, v_t: np.ndarray, p: HeadParams):
    """One recurrent step of the static-decay WKV operator.

    Returns (wkv_t, next_state). The emitted wkv_t is bonus-weighted current
    outer product plus the accumulated history; the state then decays by
    diag(w) and absorbs the current outer product.
    """
    if state.shape[-2] != k_t.shape[-1] or state.shape[-1] != v_t.shape[-1]:
        raise DimensionError(f"wkv_di_step: state {state.shape}, k {k_t.shape}, v {v_t.shape}")
    w = decay_transform(p.w_raw)
    kv = _outer(k_t, v_t)
    wkv = p.u[..., :, None] * kv + state
    return wkv, w[..., :, None] * state + kv


def wkv_dd_step(state: np.ndarray, k_t: np.ndarray, v_t: np.ndarray, u: np.ndarray, w_t: np.ndarray):
    """One recurrent step with an already-transformed dynamic decay w_t."""
    if state.shape[-2] != k_t.shape[-1] or state.shape[-1] != v_t.shape[-1]:
        raise DimensionError(f"wkv_dd_step: state {state.shape}, k {k_t.shape}, v {v_t.shape}")
    if np.any(w_t <= 0.0) or np.any(w_t >= 1.0):
        raise ContractionError("dynamic decay left (0, 1); state update would not contract")
    kv = _outer(k_t, v_t)
    wkv = u[..., :, None] * kv + state
    return wkv, w_t[..., :, None] * state + kv


def wkv_di_parallel(K: np.ndarray, V: np.ndarray, p: HeadParams) -> np.ndarray:
    """Whole-sequence WKV trace in closed form (static decay).

    Materializes the decay-power matrix w^(t-1-i) instead of running the
    recurrence, so it is an independent evaluation route against the step
    form. O(T^2) memory; meant for oracle-sized problems.
    """
    if K.shape != V.shape:
        raise DimensionError(f"wkv_di_parallel: K {K.shape} vs V {V.shape}")
    T = K.shape[0]
    w = decay_transform(p.w_raw)
    t_idx = np.arange(T)
    expo = np.maximum(t_idx[:, None] - 1 - t_idx[None, :], 0)  # (T, T): t-1-i
    past = t_idx[None, :] < t_idx[:, None]                     # strictly older tokens
    M = np.where(past[:, :, None], w[None, None, :] ** expo[:, :, None], 0.0)  # (T, T, Kd)
    out = np.tensordot(M * K[None, :, :], V, axes=(1, 0))      # (T, Kd, V)
    out += p.u[None, :, None] * K[:, :, None] * V[:, None, :]
    return out


def wkv_dd_parallel(K: np.ndarray, V: np.ndarray, u: np.ndarray, W_seq: np.ndarray) -> np.ndarray:
    """Whole-sequence WKV trace in closed form (dynamic decay).

    Uses log-space prefix sums: the decay applied to token i at output t is
    exp(sum of log w over steps i+1 .. t-1). Distinct math from the step
    recurrence, and it collapses to the static-decay power form when W_seq
    is constant over time.
    """
    if K.shape != V.shape or W_seq.shape != K.shape:
        raise DimensionError(f"wkv_dd_parallel: K {K.shape}, V {V.shape}, W {W_seq.shape}")
    if np.any(W_seq <= 0.0) or np.any(W_seq >= 1.0):
        raise ContractionError("dynamic decay left (0, 1)")
    T = K.shape[0]
    cs = np.concatenate([np.zeros((1, K.shape[1]), dtype=W_seq.dtype), np.cumsum(np.log(W_seq), axis=0)])
    # decay(i -> t) = exp(cs[t] - cs[i+1]) for i < t; mask pre-exp so the
    # discarded upper triangle never overflows
    diff = cs[:-1][:, None, :] - cs[1:][None, :, :]      # (T, T, Kd) at [t, i]
    past = np.arange(T)[None, :] < np.arange(T)[:, None]
    M = np.exp(np.where(past[:, :, None], diff, -np.inf))
    out = np.tensordot(M * K[None, :, :], V, axes=(1, 0))
    out += u[None, :, None] * K[:, :, None] * V[:, None, :]
    return out


# ---------------------------------------------------------------------------
# fused readout scan (training workhorse)


def wkv_readout_scan(r, k, v, u, w, s0, need_tape: bool = False):
    """Run the WKV recurrence over time and contract each wkv_t with r_t.

    Shapes: r/k (..., T, K), v (..., T, V), u (..., K), w (..., T, K)
    (broadcast a static decay to a length-T view for the di variant),
    s0 (..., K, V). Returns (y, s_final, states) with y (..., T, V) and,
    when need_tape is set, states holding S_{t-1} for every t.
    """
    T = k.shape[-2]
    S = s0.astype(np.result_type(s0, k), copy=True)
    y = np.empty(v.shape, dtype=S.dtype)
    states = np.empty(S.shape[:-2] + (T,) + S.shape[-2:], dtype=S.dtype) if need_tape else None
    uk = u[..., None, :] * k
    for t in range(T):
        if need_tape:
            states[..., t, :, :] = S
        kt = k[..., t, :, None]            # (..., K, 1)
        vt = v[..., t, None, :]            # (..., 1, V)
        kv = kt * vt
        wkv = uk[..., t, :, None] * vt + S
        y[..., t, :] = (r[..., t, None, :] @ wkv)[..., 0, :]
        S = w[..., t, :, None] * S + kv
    return y, S, states


def wkv_readout_scan_backward(r, k, v, u, w, states, s_final, g_y, g_s_final=None):
    """Reverse-mode companion of :func:`wkv_readout_scan`.

    Returns gradients (g_r, g_k, g_v, g_u, g_w, g_s0). g_u keeps the
    broadcast shape of u summed over time; callers reduce batch dims.
    """
    T = k.shape[-2]
    g_r = np.zeros_like(r)
    g_k = np.zeros_like(k)
    g_v = np.zeros_like(v)
    g_w = np.zeros_like(w)
    g_u = np.zeros(np.broadcast_shapes(u.shape, k.shape[:-2] + k.shape[-1:]), dtype=k.dtype)
    gS = np.zeros_like(states[..., 0, :, :]) if g_s_final is None else g_s_final.copy()
    uk_all = u[..., None, :] * k
    for t in range(T - 1, -1, -1):
        kt, vt = k[..., t, :], v[..., t, :]
        S_prev = states[..., t, :, :]
        gy_col = g_y[..., t, :, None]                    # (..., V, 1)
        # y_t = r_t . (u*outer(k,v) + S_prev), so d r_t = wkv @ gy;
        # the rank-1 part contracts to (u*k)*(v.gy) without materializing wkv
        v_dot_gy = (vt[..., None, :] @ gy_col)[..., 0, :]
        uk = uk_all[..., t, :]
        g_r[..., t, :] = uk * v_dot_gy + (S_prev @ gy_col)[..., 0]
        g_wkv = r[..., t, :, None] * g_y[..., t, None, :]
        # state update S_t = w_t*S_prev + outer(k, v)
        g_w[..., t, :] = (gS * S_prev).sum(axis=-1)
        gWv = (g_wkv @ vt[..., :, None])[..., 0]
        g_k[..., t, :] = u * gWv + (gS @ vt[..., :, None])[..., 0]
        g_v[..., t, :] = (uk[..., None, :] @ g_wkv)[..., 0, :] + (kt[..., None, :] @ gS)[..., 0, :]
        g_u += gWv * kt
        gS = g_wkv + w[..., t, :, None] * gS
    return g_r, g_k, g_v, g_u, g_w, gS


# ---------------------------------------------------------------------------
# analytic backward companions


def decay_transform_backward(d: np.ndarray, g_out: np.ndarray) -> np.ndarray:
    # d/dd exp(-exp(d)) = -exp(d) * exp(-exp(d)); the true derivative
    # underflows to zero where exp(d) overflows, so zero the inf*0 cases
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        grad = np.exp(d) * np.exp(-np.exp(d))
    return -g_out * np.where(np.isfinite(grad), grad, 0.0)


def token_shift_di_backward(x_t, x_prev, p: ShiftParams, g_out):
    mixed = p.mu * x_t + (1.0 - p.mu) * x_prev
    g_mixed = g_out @ p.W.T
    grads_in = {"x_t": g_mixed * p.mu, "x_prev": g_mixed * (1.0 - p.mu)}
    grads_p = {"mu": _sum_to(g_mixed * (x_t - x_prev), p.mu.shape),
               "W": _stacked_outer(mixed, g_out)}
    return grads_in, grads_p


def lora_eval_backward(x, p: LoraParams, g_out):
    h = np.tanh(x @ p.A)
    g_h = g_out @ p.B.T
    g_pre = g_h * (1.0 - h * h)
    grads_in = {"x": g_pre @ p.A.T}
    grads_p = {"lam": _sum_to(g_out, p.lam.shape),
               "A": _stacked_outer(x, g_pre),
               "B": _stacked_outer(h, g_out)}
    return grads_in, grads_p


def ddlerp_backward(a, b, mu_x, p: LoraParams, g_out):
    inner = a + (b - a) * mu_x
    gate = lora_eval(inner, p)
    g_a = g_out * (1.0 - gate)
    g_b = g_out * gate
    g_gate = g_out * (b - a)
    lg_in, lg_p = lora_eval_backward(inner, p, g_gate)
    g_inner = lg_in["x"]
    g_a = g_a + g_inner * (1.0 - mu_x)
    g_b = g_b + g_inner * mu_x
    grads_in = {"a": g_a, "b": g_b}
    grads_p = {"mu_x": _sum_to(g_inner * (b - a), mu_x.shape), **lg_p}
    return grads_in, grads_p


def token_shift_dd_backward(x_t, x_prev, p: ShiftParams, g_out):
    mixed = ddlerp(x_t, x_prev, p.mu_x, p.lora)
    g_mixed = g_out @ p.W.T
    dd_in, dd_p = ddlerp_backward(x_t, x_prev, p.mu_x, p.lora, g_mixed)
    grads_in = {"x_t": dd_in["a"], "x_prev": dd_in["b"]}
    grads_p = {"W": _stacked_outer(mixed, g_out), **dd_p}
    return grads_in, grads_p


def dynamic_decay_backward(x_t, x_prev, mu_x, ddlerp_lora, decay_lora, g_out):
    shifted = ddlerp(x_t, x_prev, mu_x, ddlerp_lora)
    d = lora_eval(shifted, decay_lora)
    g_d = decay_transform_backward(d, g_out)
    lg_in, lg_decay = lora_eval_backward(shifted, decay_lora, g_d)
    dd_in, dd_p = ddlerp_backward(x_t, x_prev, mu_x, ddlerp_lora, lg_in["x"])
    grads_in = {"x_t": dd_in["a"], "x_prev": dd_in["b"]}
    grads_p = {"mu_x": dd_p["mu_x"],
               "ddlerp_lora": {k: dd_p[k] for k in ("lam", "A", "B")},
               "decay_lora": lg_decay}
    return grads_in, grads_p


def wkv_di_step_backward(state, k_t, v_t, p: HeadParams, g_wkv, g_state_next):
    w = decay_transform(p.w_raw)
    grads_in = {
        "state": g_wkv + w[..., :, None] * g_state_next,
        "k_t": p.u * np.einsum("...kv,...v->...k", g_wkv, v_t)
        + np.einsum("...kv,...v->...k", g_state_next, v_t),
        "v_t": np.einsum("...kv,...k->...v", g_wkv, p.u * k_t)
        + np.einsum("...kv,...k->...v", g_state_next, k_t),
    }
    g_w = np.einsum("...kv,...kv->...k", g_state_next, state)
    grads_p = {
        "u": _sum_to(np.einsum("...kv,...v->...k", g_wkv, v_t) * k_t, p.u.shape),
        "w_raw": _sum_to(decay_transform_backward(p.w_raw, g_w), p.w_raw.shape),
    }
    return grads_in, grads_p


def wkv_dd_step_backward(state, k_t, v_t, u, w_t, g_wkv, g_state_next):
    grads_in = {
        "state": g_wkv + w_t[..., :, None] * g_state_next,
        "k_t": u * np.einsum("...kv,...v->...k", g_wkv, v_t)
        + np.einsum("...kv,...v->...k", g_state_next, v_t),
        "v_t": np.einsum("...kv,...k->...v", g_wkv, u * k_t)
        + np.einsum("...kv,...k->...v", g_state_next, k_t),
        "w_t": np.einsum("...kv,...kv->...k", g_state_next, state),
    }
    grads_p = {"u": _sum_to(np.einsum("...kv,...v->...k", g_wkv, v_t) * k_t, u.shape)}
    return grads_in, grads_p


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the parameter's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _stacked_outer(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient of y = x @ W w.r.t. W, summing any leading dims."""
    xf = x.reshape(-1, x.shape[-1])
    gf = g.reshape(-1, g.shape[-1])
    return xf.T @ gf


_BACKWARD_DISPATCH = {
    "token_shift_di": lambda inputs, params, g: token_shift_di_backward(*inputs, params, g),
    "token_shift_dd": lambda inputs, params, g: token_shift_dd_backward(*inputs, params, g),
    "lora_eval": lambda inputs, params, g: lora_eval_backward(*inputs, params, g),
    "ddlerp": lambda inputs, params, g: ddlerp_backward(*inputs, params, g),
    "decay_transform": lambda inputs, params, g: ({"d": decay_transform_backward(*inputs, g)}, {}),
    "dynamic_decay": lambda inputs, params, g: dynamic_decay_backward(*inputs, *params, g),
    "wkv_di_step": lambda inputs, params, g: wkv_di_step_backward(*inputs, params, *g),
    "wkv_dd_step": lambda inputs, params, g: wkv_dd_step_backward(*inputs, *g),
}


def kernel_backward(op_id: str, inputs: tuple, params, upstream_grad):
    """Dispatch to the analytic backward of a named forward operation.

    `inputs` is the forward positional input tuple, `params` the parameter
    object (or tuple) the forward took, and `upstream_grad` the loss
    gradient at the forward output (a tuple of (g_wkv, g_state_next) for
    the two-output wkv steps). Returns (input_grads, param_grads) dicts
    keyed like the forward arguments.
    """
    try:
        fn = _BACKWARD_DISPATCH[op_id]
    except KeyError:
        raise UnsupportedOpError(f"no backward registered for op {op_id!r}") from None
    return fn(inputs, params, upstream_grad)
