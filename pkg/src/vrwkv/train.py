"""Two-stage training: schedule, selective weight decay, freeze masks, loop.

Stage 1 aligns vision and language by updating only the projector; stage 2
finetunes the projector together with the whole language stack. The frozen
random patch embedder never trains. All randomness flows from the config
seed, so single-threaded runs are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import vision as vi
from .data import SyntheticSample, gen_synthetic
from .errors import ConfigError, NumericError
from .losses import cross_entropy, cross_entropy_backward
from .model import Model, model_seq_backward, model_seq_forward, named_parameters, param_dict
from .prompting import (BOS, EOS, PromptStrategy, assemble_prompt, detokenize,
                        stride_indices, tokenize)


@dataclass
class TrainConfig:
    lr_init: float = 4e-3
    lr_end: float = 3e-4
    schedule: str = "cosine"
    weight_decay: float = 0.0
    epochs_stage1: int = 1
    epochs_stage2: int = 3
    batch_size: int = 16
    grad_accum: int = 1
    reduction: str = "sample"
    seed: int = 0
    lr_stage1: float | None = None  # stage-1 override; defaults to lr_init


@dataclass
class DataConfig:
    grid: int = 2
    palette: int = 4
    n_train: int = 5000
    n_eval: int = 500
    img_px: int = 32


def lr_at(step: int, total_steps: int, lr_init: float, lr_end: float) -> float:
    """Cosine decay from lr_init to lr_end, no warmup."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_init
    return lr_end + 0.5 * (lr_init - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


def freeze_mask(stage: int, model: Model) -> set[str]:
    """Names trainable at a stage. Stage 1: projector only. Stage 2: projector
    plus the whole language stack (and tiny attention). The patch embedder is
    frozen in both."""
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    names = [n for n, _ in named_parameters(model)]
    proj = {n for n in names if n.startswith("proj.")}
    if stage == 1:
        return proj
    return {n for n in names if not n.startswith("patch.")}


def decayable(name: str) -> bool:
    """Weight decay hits only linear projection matrices: branch/output
    projections, FFN matrices, head, projector, tiny attention. Mix ratios,
    bonuses, decays, lora vectors/factors, norms, biases and the embedding
    table are exempt."""
    if name.startswith(("proj.w", "tiny.w")):
        return True
    if name == "head.W":
        return True
    return name.endswith((".W", ".w_out", ".w_v")) and ".heads." not in name


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], trainable: set[str],
                 beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.trainable = sorted(trainable)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {n: np.zeros_like(params[n]) for n in self.trainable}
        self.v = {n: np.zeros_like(params[n]) for n in self.trainable}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name in self.trainable:
            g = grads.get(name)
            if g is None:
                continue  # parameter did not participate in this graph
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}")
            p = self.params[name]
            g = g.astype(p.dtype, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if self.weight_decay > 0.0 and decayable(name):
                update = update + self.weight_decay * p
            p -= p.dtype.type(lr) * update


# ---------------------------------------------------------------------------
# sample encoding and batching


def encode_sample(sample: SyntheticSample, with_answer=True):
    instr_ids = [BOS] + tokenize(sample.instruction)
    answer_ids = tokenize(sample.answer) + [EOS] if with_answer else []
    return instr_ids, answer_ids


def group_by_layout(samples):
    """Split samples into runs sharing an instruction length (and so an
    image span), preserving first-appearance order for determinism."""
    groups = {}
    for s in samples:
        groups.setdefault(len(s.instruction), []).append(s)
    return list(groups.values())


def visual_tokens(model: Model, images: np.ndarray, need_tape=False):
    """Patch-embed and project a batch of images: (B, px, px, c) -> (B, n, D)."""
    cfg = model.cfg
    B, h_px, w_px, c = images.shape
    p = cfg.patch
    gh, gw = h_px // p, w_px // p
    patches = (images.reshape(B, gh, p, gw, p, c).transpose(0, 1, 3, 2, 4, 5)
               .reshape(B * gh * gw, p * p * c).astype(model.dtype))
    grid_tokens = patches @ model.patch_w
    flat_grid = vi.ImageGrid(1, B * gh * gw, grid_tokens)
    if need_tape:
        out, tape = vi.project_visual(flat_grid, model.proj, need_tape=True)
        return out.reshape(B, gh * gw, cfg.d_model), (gh, gw), tape
    return vi.project_visual(flat_grid, model.proj).reshape(B, gh * gw, cfg.d_model), (gh, gw), None


def build_batch(model: Model, samples: list[SyntheticSample], strategy: PromptStrategy,
                need_tape=False, with_answers=True, image_tokens=None):
    """Assemble a padded training batch; all samples must share a layout."""
    vis, grid_hw, proj_tape = visual_tokens(
        model, np.stack([s.image for s in samples]), need_tape=need_tape)
    if image_tokens is not None and image_tokens < vis.shape[1]:
        vis = vis[:, stride_indices(vis.shape[1], image_tokens)]
        grid_hw = (1, image_tokens)  # truncation breaks the 2D grid
    B, n_img, D = vis.shape
    layouts = []
    for b, s in enumerate(samples):
        instr_ids, ans_ids = encode_sample(s, with_answer=with_answers)
        layout = assemble_prompt(strategy, model.embed[instr_ids], vis[b],
                                 model.embed[ans_ids] if ans_ids else np.zeros((0, D), model.dtype),
                                 instruction_ids=instr_ids, answer_ids=ans_ids)
        layout.grid_hw = grid_hw
        layouts.append(layout)
    span = layouts[0].image_span
    if any(l.image_span != span for l in layouts):
        raise ConfigError("batch mixes image spans; group samples by layout")
    T = max(len(l) for l in layouts)
    embeds = np.zeros((B, T, D), dtype=model.dtype)
    ids = np.full((B, T), EOS, dtype=np.int64)
    target_mask = np.zeros((B, T), dtype=bool)
    for b, l in enumerate(layouts):
        n = len(l)
        embeds[b, :n] = l.embeddings
        ids[b, :n] = l.token_ids
        target_mask[b, l.target_span[0]:l.target_span[1]] = True
    return dict(embeds=embeds, ids=ids, target_mask=target_mask, image_span=span,
                grid_hw=grid_hw, proj_tape=proj_tape, n_img=n_img)


def batch_loss_and_grads(model: Model, batch, reduction: str, group_size: int):
    """Forward + loss + full backward for one micro-batch."""
    logits, _, _, tape = model_seq_forward(
        model, batch["embeds"], batch["image_span"], batch["grid_hw"], need_tape=True)
    ids, mask = batch["ids"], batch["target_mask"]
    # position t predicts the token at t+1; mask indexes the predicted token
    loss, weights = cross_entropy(logits[:, :-1], ids[:, 1:], mask[:, 1:],
                                  reduction, group_size)
    g_logits = np.zeros_like(logits)
    g_logits[:, :-1] = cross_entropy_backward(logits[:, :-1], ids[:, 1:], weights)
    grads, g_embeds = model_seq_backward(model, tape, g_logits)

    # route embedding-stream gradients to the embed table and the projector
    grads["embed"] = np.zeros_like(model.embed)
    text = ids >= 0
    s, e = batch["image_span"]
    text[:, s:e] = False
    np.add.at(grads["embed"], ids[text], g_embeds[text].astype(model.embed.dtype))
    g_vis = g_embeds[:, s:e].reshape(-1, g_embeds.shape[-1])
    vi.project_visual_backward(batch["proj_tape"], model.proj, g_vis, grads)
    return loss, grads


def accumulate(into: dict, grads: dict):
    for k, v in grads.items():
        if k in into:
            into[k] += v
        else:
            into[k] = v


# ---------------------------------------------------------------------------
# evaluation (batched greedy decoding)


def evaluate(model: Model, samples: list[SyntheticSample], strategy: PromptStrategy,
             batch_size: int = 64, max_new_tokens: int = 12, image_tokens=None) -> float:
    """Exact-match accuracy of greedy answers on a held-out set."""
    correct = 0
    chunks = []
    for group in group_by_layout(samples):
        for i in range(0, len(group), batch_size):
            chunks.append(group[i:i + batch_size])
    for chunk in chunks:
        batch = build_batch(model, chunk, strategy, with_answers=False,
                            image_tokens=image_tokens)
        B = len(chunk)
        logits, states, tiny, _ = model_seq_forward(
            model, batch["embeds"], batch["image_span"], batch["grid_hw"])
        cur = logits[:, -1].argmax(axis=-1)
        done = np.zeros(B, dtype=bool)
        outputs = [[] for _ in range(B)]
        for _ in range(max_new_tokens):
            for b in range(B):
                if not done[b]:
                    if cur[b] == EOS:
                        done[b] = True
                    else:
                        outputs[b].append(int(cur[b]))
            if done.all():
                break
            x = model.embed[cur][:, None, :]
            logits, states, tiny, _ = model_seq_forward(model, x, (0, 0), None,
                                                        state0=states, tiny_cache=tiny)
            cur = logits[:, -1].argmax(axis=-1)
        for b, s in enumerate(chunk):
            if detokenize(outputs[b]).decode("utf-8", errors="replace") == s.answer:
                correct += 1
    return correct / max(len(samples), 1)


# ---------------------------------------------------------------------------
# the two-stage loop


def run_training(model: Model, tcfg: TrainConfig, dcfg: DataConfig,
                 train_set=None, eval_set=None, log=None) -> dict:
    if tcfg.schedule != "cosine":
        raise ConfigError(f"unsupported schedule {tcfg.schedule!r}")
    if train_set is None:
        train_set = gen_synthetic(tcfg.seed, dcfg.n_train, dcfg.grid, dcfg.palette, dcfg.img_px)
    if eval_set is None:
        eval_set = gen_synthetic(tcfg.seed + 1, dcfg.n_eval, dcfg.grid, dcfg.palette, dcfg.img_px)
    strategy = PromptStrategy(model.cfg.prompt)
    metrics = {"stage_losses": {1: [], 2: []}, "accuracy": None}
    params = param_dict(model)

    for stage in (1, 2):
        epochs = tcfg.epochs_stage1 if stage == 1 else tcfg.epochs_stage2
        if epochs <= 0:
            continue
        lr0 = tcfg.lr_stage1 if (stage == 1 and tcfg.lr_stage1 is not None) else tcfg.lr_init
        trainable = freeze_mask(stage, model)
        opt = AdamW(params, trainable, weight_decay=tcfg.weight_decay)
        group = tcfg.batch_size * tcfg.grad_accum
        updates_per_epoch = math.ceil(len(train_set) / group)
        total_updates = epochs * updates_per_epoch
        rng = np.random.default_rng((tcfg.seed, stage))
        step = 0
        for epoch in range(epochs):
            order = rng.permutation(len(train_set))
            for u in range(updates_per_epoch):
                idx = order[u * group:(u + 1) * group]
                if idx.size == 0:
                    continue
                grads = {}
                total_loss = 0.0
                n_micro = 0
                for m0 in range(0, idx.size, tcfg.batch_size):
                    micro = [train_set[j] for j in idx[m0:m0 + tcfg.batch_size]]
                    for sub in group_by_layout(micro):
                        batch = build_batch(model, sub, strategy, need_tape=True)
                        loss, g = batch_loss_and_grads(model, batch, tcfg.reduction, len(idx))
                        accumulate(grads, g)
                        total_loss += loss
                        n_micro += 1
                if tcfg.reduction == "batch" and n_micro > 1:
                    for k in grads:
                        grads[k] /= n_micro
                    total_loss /= n_micro
                opt.step(grads, lr_at(step, total_updates, lr0, tcfg.lr_end))
                step += 1
                metrics["stage_losses"][stage].append(total_loss)
                if log and step % 25 == 0:
                    log(f"stage {stage} step {step}/{total_updates} loss {total_loss:.4f}")

    metrics["accuracy"] = evaluate(model, eval_set, strategy)
    if log:
        log(f"held-out accuracy {metrics['accuracy']:.3f}")
    return metrics
