"""Cross-entropy with the two reduction modes that change training behavior.

Batch-level reduction divides every target token by the total number of
target tokens in the batch, so long samples dominate. Sample-level reduction
first normalizes each sample by its own target length and then by the number
of samples in the gradient-accumulation group, making the loss invariant to
how samples are packed into batches.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyTargetError


def token_weights(mask, reduction: str, group_size=None) -> np.ndarray:
    """Per-token loss weights (float64) for a (B, T) boolean target mask."""
    mask = np.asarray(mask, dtype=bool)
    total = int(mask.sum())
    if total == 0:
        raise EmptyTargetError("no target positions in mask")
    if reduction == "batch":
        return mask / np.float64(total)
    if reduction == "sample":
        n_group = int(group_size) if group_size is not None else mask.shape[0]
        lengths = mask.sum(axis=1, keepdims=True)
        denom = np.maximum(lengths, 1) * np.float64(n_group)
        return mask / denom
    raise ValueError(f"unknown reduction {reduction!r}")


def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse


def cross_entropy(logits, targets, mask, reduction: str = "batch", group_size=None):
    """Weighted next-token cross entropy.

    logits (B, T, V), targets (B, T) int ids, mask (B, T) marking target
    positions. Returns (scalar loss, per-token weights).
    """
    weights = token_weights(mask, reduction, group_size)
    logp = _log_softmax(np.asarray(logits, dtype=np.float64))
    safe_targets = np.where(mask, targets, 0)
    tgt_logp = np.take_along_axis(logp, safe_targets[..., None], axis=-1)[..., 0]
    loss = float(-(weights * tgt_logp).sum())
    return loss, weights


def cross_entropy_backward(logits, targets, weights):
    """d(loss)/d(logits) for the weighted cross entropy above."""
    logp = _log_softmax(np.asarray(logits, dtype=np.float64))
    g = np.exp(logp) * weights[..., None]
    safe_targets = np.where(weights > 0, targets, 0)
    onehot_sub = np.zeros_like(g)
    np.put_along_axis(onehot_sub, safe_targets[..., None], weights[..., None], axis=-1)
    g -= onehot_sub  # weights are zero off-target, so pads subtract nothing
    return g.astype(logits.dtype)
