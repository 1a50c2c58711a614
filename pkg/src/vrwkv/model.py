"""Whole-model assembly: config, parameter store, and both execution modes.

The parallel mode runs (B, T, D) tensors through the block stack with
per-layer scan permutations over the image span and keeps a tape for the
analytic backward pass. The recurrent mode advances a RecurrentState one
token at a time through the step-form blocks; a buffered-chunk entry point
replays the per-layer permutations over an incoming image span so streaming
inference reproduces parallel-mode logits exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import blocks as bl
from . import kernels as kr
from . import vision as vi
from .errors import ConfigError, StateError
from .prompting import PromptLayout, VOCAB_SIZE

RECURRENCE_VARIANTS = ("di", "dd")
SCAN_MODES = ("uni", "bi", "multi")
PROMPT_STRATEGIES = ("first", "last", "sandwich")


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    head_dim: int = 16
    d_ffn: int = 256
    vocab_size: int = VOCAB_SIZE
    d_vision: int = 48
    patch: int = 4
    image_channels: int = 3
    lora_rank: int = 4
    recurrence: str = "dd"
    scan_mode: str = "bi"
    prompt: str = "sandwich"
    tiny_attention: bool = False
    tiny_attention_dim: int = 16

    def validate(self):
        if self.n_heads * self.head_dim != self.d_model:
            raise ConfigError(f"n_heads*head_dim = {self.n_heads * self.head_dim} != d_model {self.d_model}")
        for name in ("d_model", "n_layers", "n_heads", "head_dim", "d_ffn", "vocab_size",
                     "d_vision", "patch", "image_channels", "lora_rank", "tiny_attention_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.recurrence not in RECURRENCE_VARIANTS:
            raise ConfigError(f"recurrence must be one of {RECURRENCE_VARIANTS}")
        if self.scan_mode not in SCAN_MODES:
            raise ConfigError(f"scan_mode must be one of {SCAN_MODES}")
        if self.prompt not in PROMPT_STRATEGIES:
            raise ConfigError(f"prompt must be one of {PROMPT_STRATEGIES}")
        if self.tiny_attention and self.tiny_attention_dim >= self.d_model:
            raise ConfigError("tiny attention width must be below d_model")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class TinyAttentionParams:
    w_q: np.ndarray   # (D, d_tiny)
    w_k: np.ndarray
    w_v: np.ndarray
    w_out: np.ndarray  # (d_tiny, D)


@dataclass
class Model:
    cfg: ModelConfig
    embed: np.ndarray            # (vocab, D)
    ln0_gamma: np.ndarray
    ln0_beta: np.ndarray
    blocks: list
    lnf_gamma: np.ndarray
    lnf_beta: np.ndarray
    head: np.ndarray             # (D, vocab)
    proj: vi.ProjectorParams
    patch_w: np.ndarray          # ((patch*patch*c), d_vision), frozen
    tiny: TinyAttentionParams | None = None

    @property
    def dtype(self):
        return self.embed.dtype


def init_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    cfg.validate()
    rng = np.random.default_rng(seed)
    eb = 1.0 / np.sqrt(cfg.d_model)
    blocks = [bl.init_block(rng, cfg.d_model, cfg.n_heads, cfg.d_ffn, cfg.lora_rank,
                            cfg.recurrence, dtype) for _ in range(cfg.n_layers)]
    tiny = None
    if cfg.tiny_attention:
        tb = 1.0 / np.sqrt(cfg.d_model)
        ob = 1.0 / np.sqrt(cfg.tiny_attention_dim)
        tiny = TinyAttentionParams(
            w_q=rng.uniform(-tb, tb, size=(cfg.d_model, cfg.tiny_attention_dim)).astype(dtype),
            w_k=rng.uniform(-tb, tb, size=(cfg.d_model, cfg.tiny_attention_dim)).astype(dtype),
            w_v=rng.uniform(-tb, tb, size=(cfg.d_model, cfg.tiny_attention_dim)).astype(dtype),
            w_out=rng.uniform(-ob, ob, size=(cfg.tiny_attention_dim, cfg.d_model)).astype(dtype))
    return Model(
        cfg=cfg,
        embed=(rng.uniform(-eb, eb, size=(cfg.vocab_size, cfg.d_model))).astype(dtype),
        ln0_gamma=np.ones(cfg.d_model, dtype=dtype), ln0_beta=np.zeros(cfg.d_model, dtype=dtype),
        blocks=blocks,
        lnf_gamma=np.ones(cfg.d_model, dtype=dtype), lnf_beta=np.zeros(cfg.d_model, dtype=dtype),
        head=rng.uniform(-eb, eb, size=(cfg.d_model, cfg.vocab_size)).astype(dtype),
        proj=vi.init_projector(rng, cfg.d_vision, cfg.d_model, dtype),
        patch_w=vi.init_patch_embed(rng, cfg.patch, cfg.image_channels, cfg.d_vision, dtype),
        tiny=tiny)


def named_parameters(model: Model):
    """Deterministic (name, array) walk; names match gradient-dict keys."""
    yield "embed", model.embed
    yield "ln0.gamma", model.ln0_gamma
    yield "ln0.beta", model.ln0_beta
    dd = model.cfg.recurrence == "dd"
    for i, bp in enumerate(model.blocks):
        pre = f"blocks.{i}."
        yield pre + "ln1_gamma", bp.ln1_gamma
        yield pre + "ln1_beta", bp.ln1_beta
        yield pre + "ln2_gamma", bp.ln2_gamma
        yield pre + "ln2_beta", bp.ln2_beta
        for name in bl.BRANCHES:
            br = getattr(bp.tm, name)
            if dd:
                yield pre + f"tm.{name}.mu_x", br.mu_x
                yield pre + f"tm.{name}.lora.lam", br.lora.lam
                yield pre + f"tm.{name}.lora.A", br.lora.A
                yield pre + f"tm.{name}.lora.B", br.lora.B
            else:
                yield pre + f"tm.{name}.mu", br.mu
            yield pre + f"tm.{name}.W", br.W
        yield pre + "tm.heads.u", bp.tm.heads.u
        yield pre + "tm.heads.w_raw", bp.tm.heads.w_raw
        if dd:
            yield pre + "tm.decay_mu_x", bp.tm.decay_mu_x
            yield pre + "tm.decay_ddlerp_lora.lam", bp.tm.decay_ddlerp_lora.lam
            yield pre + "tm.decay_ddlerp_lora.A", bp.tm.decay_ddlerp_lora.A
            yield pre + "tm.decay_ddlerp_lora.B", bp.tm.decay_ddlerp_lora.B
            yield pre + "tm.decay_lora.lam", bp.tm.decay_lora.lam
            yield pre + "tm.decay_lora.A", bp.tm.decay_lora.A
            yield pre + "tm.decay_lora.B", bp.tm.decay_lora.B
        yield pre + "tm.w_out", bp.tm.w_out
        yield pre + "tm.hn_gamma", bp.tm.hn_gamma
        yield pre + "tm.hn_beta", bp.tm.hn_beta
        yield pre + "cm.r.mu", bp.cm.r.mu
        yield pre + "cm.r.W", bp.cm.r.W
        yield pre + "cm.k.mu", bp.cm.k.mu
        yield pre + "cm.k.W", bp.cm.k.W
        yield pre + "cm.w_v", bp.cm.w_v
    yield "lnf.gamma", model.lnf_gamma
    yield "lnf.beta", model.lnf_beta
    yield "head.W", model.head
    yield "proj.w1", model.proj.w1
    yield "proj.b1", model.proj.b1
    yield "proj.w2", model.proj.w2
    yield "proj.b2", model.proj.b2
    yield "patch.W", model.patch_w
    if model.tiny is not None:
        yield "tiny.w_q", model.tiny.w_q
        yield "tiny.w_k", model.tiny.w_k
        yield "tiny.w_v", model.tiny.w_v
        yield "tiny.w_out", model.tiny.w_out


def param_dict(model: Model) -> dict:
    return dict(named_parameters(model))


def param_count(model: Model) -> int:
    return sum(a.size for _, a in named_parameters(model))


def set_parameter(model: Model, name: str, value: np.ndarray):
    """Overwrite a named parameter in place (checkpoint load path)."""
    target = param_dict(model).get(name)
    if target is None:
        raise ConfigError(f"unknown parameter {name!r}")
    if target.shape != value.shape:
        raise ConfigError(f"shape mismatch for {name}: {target.shape} vs {value.shape}")
    target[...] = value


# ---------------------------------------------------------------------------
# scan plumbing


def layer_permutations(cfg: ModelConfig, image_span, grid_hw, n_tokens):
    """Per-layer (perm, inv_perm) over the image span, or None for identity."""
    start, end = image_span
    span = end - start
    if span <= 0:
        return [None] * cfg.n_layers
    if grid_hw is None:
        grid_hw = (1, span)
    if grid_hw[0] * grid_hw[1] != span:
        raise ConfigError(f"grid {grid_hw} does not cover span of {span}")
    dirs = vi.layer_direction_schedule(cfg.scan_mode, cfg.n_layers)
    out = []
    for d in dirs:
        if d is vi.ScanDirection.FORWARD:
            out.append(None)
        else:
            perm = vi.scan_permutation(d, *grid_hw)
            out.append((perm, vi.inverse_permutation(perm)))
    return out


# ---------------------------------------------------------------------------
# tiny attention (hybrid layer)


def tiny_attention_seq(x, p: TinyAttentionParams, k_cache=None, v_cache=None, need_tape=False):
    """Causal single-head attention at reduced width; residual, no FFN.

    x is (B, T, D); optional caches (B, P, d_tiny) prepend already-seen
    positions. Returns the attention output (to be added residually).
    """
    d_tiny = p.w_q.shape[1]
    q = x @ p.w_q
    k = x @ p.w_k
    v = x @ p.w_v
    if k_cache is not None and k_cache.shape[1] > 0:
        k_all = np.concatenate([k_cache, k], axis=1)
        v_all = np.concatenate([v_cache, v], axis=1)
    else:
        k_all, v_all = k, v
    P = k_all.shape[1] - x.shape[1]
    scores = (q @ np.swapaxes(k_all, -1, -2)) / np.sqrt(np.array(d_tiny, dtype=x.dtype))
    T, S = x.shape[1], k_all.shape[1]
    mask = np.arange(S)[None, :] > (np.arange(T)[:, None] + P)
    scores = np.where(mask, np.array(-np.inf, dtype=x.dtype), scores)
    scores -= scores.max(axis=-1, keepdims=True)
    exps = np.exp(scores)
    attn = exps / exps.sum(axis=-1, keepdims=True)
    ctx = attn @ v_all
    out = ctx @ p.w_out
    tape = None
    if need_tape:
        tape = dict(x=x, q=q, k=k_all, v=v_all, attn=attn, ctx=ctx, d_tiny=d_tiny)
    return out, (k_all, v_all), tape


def tiny_attention_backward(tape, p: TinyAttentionParams, g_out, grads, prefix="tiny."):
    """Backward for the no-cache training case; returns gradient w.r.t. x."""
    x, q, k, v, attn, ctx = tape["x"], tape["q"], tape["k"], tape["v"], tape["attn"], tape["ctx"]

    def acc(name, val):
        key = prefix + name
        grads[key] = grads[key] + val if key in grads else val

    acc("w_out", kr._stacked_outer(ctx, g_out))
    g_ctx = g_out @ p.w_out.T
    g_attn = g_ctx @ np.swapaxes(v, -1, -2)
    g_v = np.swapaxes(attn, -1, -2) @ g_ctx
    # softmax rows: g_scores = attn * (g_attn - sum(g_attn*attn))
    g_scores = attn * (g_attn - (g_attn * attn).sum(axis=-1, keepdims=True))
    g_scores = g_scores / np.sqrt(np.array(tape["d_tiny"], dtype=x.dtype))
    g_q = g_scores @ k
    g_k = np.swapaxes(g_scores, -1, -2) @ q
    acc("w_q", kr._stacked_outer(x, g_q))
    acc("w_k", kr._stacked_outer(x, g_k))
    acc("w_v", kr._stacked_outer(x, g_v))
    return g_q @ p.w_q.T + g_k @ p.w_k.T + g_v @ p.w_v.T


# ---------------------------------------------------------------------------
# parallel (sequence) mode


def model_seq_forward(model: Model, embeds, image_span=(0, 0), grid_hw=None,
                      state0=None, tiny_cache=None, need_tape=False):
    """Run the stack over (B, T, D) embeddings.

    Returns (logits, layer_states, tiny_cache', tape). layer_states is a list
    of (tm_shift, cm_shift, wkv) batched arrays, reusable as state0 for a
    following chunk.
    """
    cfg = model.cfg
    B, T, D = embeds.shape
    perms = layer_permutations(cfg, image_span, grid_hw, T)
    x, ln0_cache = bl.layer_norm(embeds, model.ln0_gamma, model.ln0_beta)
    if state0 is None:
        state0 = [(np.zeros((B, D), dtype=x.dtype), np.zeros((B, D), dtype=x.dtype),
                   np.zeros((B, cfg.n_heads, cfg.head_dim, cfg.head_dim), dtype=x.dtype))
                  for _ in range(cfg.n_layers)]
    layer_tapes = []
    states_out = []
    start, end = image_span
    for i, bp in enumerate(model.blocks):
        perm = perms[i]
        if perm is not None:
            x = vi.apply_scan(x, (start, end), perm[0])
        tm_sh, cm_sh, S0 = state0[i]
        x, (tm_sh2, cm_sh2, S_fin), tape_i = bl.block_seq_forward(
            x, tm_sh, cm_sh, S0, bp, cfg.recurrence, need_tape)
        states_out.append((tm_sh2, cm_sh2, S_fin))
        if perm is not None:
            x = vi.apply_scan(x, (start, end), perm[1])
        layer_tapes.append(tape_i)
    tiny_tape = None
    new_tiny_cache = None
    x_pre_tiny = x
    if cfg.tiny_attention:
        kc, vc = tiny_cache if tiny_cache is not None else (None, None)
        att, (k_all, v_all), tiny_tape = tiny_attention_seq(x, model.tiny, kc, vc, need_tape)
        x = x + att
        new_tiny_cache = (k_all, v_all)
    hf, lnf_cache = bl.layer_norm(x, model.lnf_gamma, model.lnf_beta)
    logits = hf @ model.head
    tape = None
    if need_tape:
        tape = dict(ln0_cache=ln0_cache, layer_tapes=layer_tapes, perms=perms,
                    image_span=image_span, lnf_cache=lnf_cache, hf=hf,
                    tiny_tape=tiny_tape, x_pre_tiny=x_pre_tiny)
    return logits, states_out, new_tiny_cache, tape


def model_seq_backward(model: Model, tape, g_logits):
    """Backward through the whole stack; returns (grads, g_embeds)."""
    cfg = model.cfg
    grads = {}
    hf = tape["hf"]
    grads["head.W"] = kr._stacked_outer(hf, g_logits)
    g_hf = g_logits @ model.head.T
    g_x, d_g, d_b = bl.layer_norm_backward(tape["lnf_cache"], model.lnf_gamma, g_hf)
    grads["lnf.gamma"] = d_g
    grads["lnf.beta"] = d_b
    if cfg.tiny_attention:
        g_att = tiny_attention_backward(tape["tiny_tape"], model.tiny, g_x, grads)
        g_x = g_x + g_att
    start, end = tape["image_span"]
    for i in range(cfg.n_layers - 1, -1, -1):
        perm = tape["perms"][i]
        if perm is not None:
            g_x = vi.apply_scan(g_x, (start, end), perm[0])
        g_x, _, _, _ = bl.block_seq_backward(g_x, model.blocks[i], cfg.recurrence,
                                             cfg.n_heads, tape["layer_tapes"][i],
                                             grads, f"blocks.{i}.")
        if perm is not None:
            g_x = vi.apply_scan(g_x, (start, end), perm[1])
    g_embeds, d_g0, d_b0 = bl.layer_norm_backward(tape["ln0_cache"], model.ln0_gamma, g_x)
    grads["ln0.gamma"] = d_g0
    grads["ln0.beta"] = d_b0
    return grads, g_embeds


def forward_parallel(layout: PromptLayout, model: Model):
    """Sequence-parallel logits for one prompt layout; (T, vocab)."""
    logits, _, _, _ = model_seq_forward(model, layout.embeddings[None],
                                        layout.image_span, layout.grid_hw)
    return logits[0]


# ---------------------------------------------------------------------------
# recurrent mode


@dataclass
class RecurrentState:
    """Per-layer constant-size inference state plus a position counter."""

    blocks: list
    position: int = 0
    tiny_k: np.ndarray | None = None
    tiny_v: np.ndarray | None = None

    @property
    def nbytes(self) -> int:
        total = sum(s.nbytes for s in self.blocks)
        if self.tiny_k is not None:
            total += self.tiny_k.nbytes + self.tiny_v.nbytes
        return total


def new_recurrent_state(model: Model) -> RecurrentState:
    cfg = model.cfg
    dt = model.dtype
    states = [bl.zero_block_state(cfg.d_model, cfg.n_heads, cfg.head_dim, dt)
              for _ in range(cfg.n_layers)]
    tk = tv = None
    if cfg.tiny_attention:
        tk = np.zeros((0, cfg.tiny_attention_dim), dtype=dt)
        tv = np.zeros((0, cfg.tiny_attention_dim), dtype=dt)
    return RecurrentState(blocks=states, tiny_k=tk, tiny_v=tv)


def _check_state(model: Model, state: RecurrentState):
    cfg = model.cfg
    if len(state.blocks) != cfg.n_layers:
        raise StateError(f"state has {len(state.blocks)} layers, model {cfg.n_layers}")
    s0 = state.blocks[0]
    if s0.tm_shift.shape != (cfg.d_model,) or s0.wkv.shape != (cfg.n_heads, cfg.head_dim, cfg.head_dim):
        raise StateError(f"state shapes {s0.tm_shift.shape}/{s0.wkv.shape} do not match config")
    if cfg.tiny_attention and state.tiny_k is None:
        raise StateError("hybrid model needs a state with tiny-attention caches")


def forward_step(token_or_embed, state: RecurrentState, model: Model):
    """One-token advance of the recurrent form; returns (logits, state)."""
    _check_state(model, state)
    cfg = model.cfg
    if isinstance(token_or_embed, (int, np.integer)):
        x = model.embed[int(token_or_embed)].copy()
    else:
        x = np.asarray(token_or_embed)
        if x.shape != (cfg.d_model,):
            raise StateError(f"embedding of shape {x.shape}, expected ({cfg.d_model},)")
    x, _ = bl.layer_norm(x, model.ln0_gamma, model.ln0_beta)
    for i, bp in enumerate(model.blocks):
        x, state.blocks[i] = bl.block_forward(x, state.blocks[i], bp, cfg.recurrence)
    if cfg.tiny_attention:
        p = model.tiny
        q = x @ p.w_q
        k = x @ p.w_k
        v = x @ p.w_v
        state.tiny_k = np.concatenate([state.tiny_k, k[None]], axis=0)
        state.tiny_v = np.concatenate([state.tiny_v, v[None]], axis=0)
        scores = (state.tiny_k @ q) / np.sqrt(np.array(q.shape[0], dtype=x.dtype))
        scores -= scores.max()
        attn = np.exp(scores)
        attn /= attn.sum()
        x = x + (attn @ state.tiny_v) @ p.w_out
    hf, _ = bl.layer_norm(x, model.lnf_gamma, model.lnf_beta)
    state.position += 1
    return hf @ model.head, state


def forward_chunk(embeds, state: RecurrentState, model: Model, grid_hw=None):
    """Advance the recurrent state over a buffered multi-token chunk.

    When grid_hw is given the chunk is an image span: every layer traverses
    it in that layer's scan order (outputs return in canonical order), which
    is how non-forward scans stay well-defined in streaming inference.
    """
    _check_state(model, state)
    cfg = model.cfg
    n = embeds.shape[0]
    span = (0, n) if grid_hw is not None else (0, 0)
    state0 = [(s.tm_shift[None], s.cm_shift[None], s.wkv[None]) for s in state.blocks]
    tiny_cache = None
    if cfg.tiny_attention:
        tiny_cache = (state.tiny_k[None], state.tiny_v[None])
    logits, states_out, new_tiny, _ = model_seq_forward(
        model, embeds[None].astype(model.dtype), span, grid_hw, state0, tiny_cache)
    for i, (tm_sh, cm_sh, S) in enumerate(states_out):
        state.blocks[i] = bl.BlockState(tm_sh[0], cm_sh[0], S[0])
    if cfg.tiny_attention:
        state.tiny_k, state.tiny_v = new_tiny[0][0], new_tiny[1][0]
    state.position += n
    return logits[0], state
