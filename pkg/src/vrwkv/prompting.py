"""Byte-level vocabulary and multimodal prompt assembly.

Prompt layouts place a contiguous block of image embeddings around
instruction text according to one of three strategies; the answer span at
the tail is what the loss is masked to. The sandwich strategy repeats the
full instruction on both sides of the image so the model reads the question
before ingesting the image and again before answering.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import LayoutError

BOS = 256
EOS = 257
SEP = 258
VOCAB_SIZE = 259

IMAGE_PLACEHOLDER = "<image>"


class PromptStrategy(Enum):
    IMAGE_FIRST = "first"
    IMAGE_LAST = "last"
    SANDWICH = "sandwich"


def tokenize(text) -> list[int]:
    """Byte-level ids; lossless against detokenize."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    return list(text)


def detokenize(ids) -> bytes:
    return bytes(i for i in ids if 0 <= i < 256)


@dataclass
class PromptLayout:
    embeddings: np.ndarray        # (T, d_model)
    image_span: tuple[int, int]   # [start, end) of image embeddings
    target_span: tuple[int, int]  # [start, end) of loss targets
    token_ids: np.ndarray | None = None  # (T,), -1 at image positions
    grid_hw: tuple[int, int] | None = None  # image-span grid; (1, n) when absent

    def __len__(self):
        return self.embeddings.shape[0]


def _cat(parts):
    parts = [p for p in parts if p.shape[0] > 0]
    if not parts:
        raise LayoutError("prompt assembled to an empty sequence")
    return np.concatenate(parts, axis=0)


def assemble_prompt(strategy: PromptStrategy, instruction, image, answer,
                    instruction_ids=None, answer_ids=None) -> PromptLayout:
    """Lay out instruction/image/answer embeddings for one strategy.

    instruction/image/answer are (n, d_model) arrays; answer may be empty at
    inference. Text-only samples (empty image) collapse to [instruction,
    answer] for every strategy. Optional id arrays ride along for training.
    """
    n_i, n_v, n_a = instruction.shape[0], image.shape[0], answer.shape[0]
    if strategy is PromptStrategy.SANDWICH and n_i == 0 and n_v > 0:
        raise LayoutError("sandwich prompt needs a non-empty instruction")

    if n_v == 0:
        order = [("i", instruction), ("a", answer)]
    elif strategy is PromptStrategy.IMAGE_FIRST:
        order = [("v", image), ("i", instruction), ("a", answer)]
    elif strategy is PromptStrategy.IMAGE_LAST:
        order = [("i", instruction), ("v", image), ("a", answer)]
    else:
        order = [("i", instruction), ("v", image), ("i2", instruction), ("a", answer)]

    embeds = _cat([part for _, part in order])
    pos = 0
    image_span = (0, 0)
    target_span = (embeds.shape[0], embeds.shape[0])
    want_ids = instruction_ids is not None
    ids_parts = []
    for kind, part in order:
        n = part.shape[0]
        if kind == "v":
            image_span = (pos, pos + n)
            if want_ids:
                ids_parts.append(np.full(n, -1, dtype=np.int64))
        elif kind == "a":
            target_span = (pos, pos + n)
            if want_ids:
                ids_parts.append(np.asarray(answer_ids if answer_ids is not None else [],
                                            dtype=np.int64))
        elif want_ids:
            ids_parts.append(np.asarray(instruction_ids, dtype=np.int64))
        pos += n

    token_ids = np.concatenate(ids_parts) if want_ids else None
    return PromptLayout(embeddings=embeds, image_span=image_span,
                        target_span=target_span, token_ids=token_ids)


def stride_indices(m: int, n: int) -> np.ndarray:
    """n strictly increasing indices into range(m), uniform stride round(k*m/n)."""
    if not 1 <= n <= m:
        raise ValueError(f"requested {n} picks from a span of {m}")
    idx = np.round(np.arange(n) * m / n).astype(np.int64)
    idx = np.minimum(idx, m - 1)
    for i in range(1, n):  # rounding can collide; bump forward, order-preserving
        if idx[i] <= idx[i - 1]:
            idx[i] = idx[i - 1] + 1
    return idx


def truncate_image_tokens(image: np.ndarray, n: int) -> np.ndarray:
    """Keep n image tokens by uniform-stride subsampling over grid order."""
    return image[stride_indices(image.shape[0], n)]


def split_template(template: str, strategy: PromptStrategy) -> tuple[str, str]:
    """Resolve a text template with an optional <image> placeholder into the
    instruction text(s) around the image span.

    First/Last ignore the placeholder position (the full text is the
    instruction). Sandwich uses the two halves when the placeholder sits
    between text, otherwise duplicates the whole instruction.
    """
    if IMAGE_PLACEHOLDER in template:
        pre, _, post = template.partition(IMAGE_PLACEHOLDER)
    else:
        pre, post = template, ""
    if strategy is not PromptStrategy.SANDWICH:
        return pre + post, ""
    pre, post = pre.strip(), post.strip()
    if pre and post:
        return pre, post
    whole = pre or post
    if not whole:
        raise LayoutError("sandwich template has no instruction text")
    return whole, whole
