"""Image-token handling: patch embedding, projector, and 2D scan orders.

Image tokens sit in a contiguous span of the prompt. A scan direction is a
permutation of that span; each layer permutes the span, runs its block, and
restores canonical order afterwards, so the residual stream (and every text
position) stays fixed while different layers traverse the grid differently.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError, LayoutError


class ScanDirection(Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    UPWARD = "upward"
    DOWNWARD = "downward"


@dataclass
class ImageGrid:
    h: int
    w: int
    tokens: np.ndarray  # (h*w, d_vision), row-major

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise DimensionError("grid needs at least one row and one column")
        if self.tokens.shape[0] != self.h * self.w:
            raise DimensionError(f"expected {self.h * self.w} tokens, got {self.tokens.shape[0]}")


def scan_permutation(direction: ScanDirection, h: int, w: int) -> np.ndarray:
    """Index order a scan direction imposes on a row-major h x w grid.

    Forward is row-major identity, Backward its reversal; Downward walks each
    column top-to-bottom with columns left-to-right, Upward is the reversal
    of Downward.
    """
    idx = np.arange(h * w)
    if direction is ScanDirection.FORWARD:
        return idx
    if direction is ScanDirection.BACKWARD:
        return idx[::-1].copy()
    down = idx.reshape(h, w).T.reshape(-1)
    if direction is ScanDirection.DOWNWARD:
        return down
    return down[::-1].copy()


def inverse_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def apply_scan(seq: np.ndarray, image_span: tuple[int, int], perm: np.ndarray) -> np.ndarray:
    """Reorder only the image-span rows of seq (rows indexed on axis -2)."""
    start, end = image_span
    if not (0 <= start <= end <= seq.shape[-2]):
        raise LayoutError(f"span {image_span} outside sequence of length {seq.shape[-2]}")
    if end - start != perm.size:
        raise LayoutError(f"span length {end - start} != permutation size {perm.size}")
    out = seq.copy()
    out[..., start:end, :] = seq[..., start:end, :][..., perm, :]
    return out


def layer_direction_schedule(mode: str, n_layers: int) -> list[ScanDirection]:
    """Per-layer directions: uni repeats Forward, bi alternates Forward and
    Backward, multi cycles all four directions."""
    if n_layers < 1:
        raise DimensionError("need at least one layer")
    cycles = {
        "uni": [ScanDirection.FORWARD],
        "bi": [ScanDirection.FORWARD, ScanDirection.BACKWARD],
        "multi": [ScanDirection.FORWARD, ScanDirection.BACKWARD,
                  ScanDirection.UPWARD, ScanDirection.DOWNWARD],
    }
    try:
        cycle = cycles[mode]
    except KeyError:
        raise LayoutError(f"unknown scan mode {mode!r}") from None
    return [cycle[i % len(cycle)] for i in range(n_layers)]


def patch_embed(image: np.ndarray, patch: int, W_e: np.ndarray) -> ImageGrid:
    """Non-overlapping patch projection; the toy stand-in for a vision encoder.

    image is (h_px, w_px, c) row-major; output tokens follow row-major grid
    order. W_e is ((patch*patch*c), d_vision) and stays frozen in training.
    """
    h_px, w_px, c = image.shape
    if h_px % patch or w_px % patch:
        raise DimensionError(f"image {h_px}x{w_px} not divisible by patch {patch}")
    gh, gw = h_px // patch, w_px // patch
    patches = (image.reshape(gh, patch, gw, patch, c)
               .transpose(0, 2, 1, 3, 4)
               .reshape(gh * gw, patch * patch * c))
    if patches.shape[1] != W_e.shape[0]:
        raise DimensionError(f"patch vector {patches.shape[1]} vs W_e {W_e.shape}")
    return ImageGrid(h=gh, w=gw, tokens=patches @ W_e)


@dataclass
class ProjectorParams:
    """Two-layer MLP mapping vision tokens into the model embedding space."""

    w1: np.ndarray  # (d_vision, d_model)
    b1: np.ndarray  # (d_model,)
    w2: np.ndarray  # (d_model, d_model)
    b2: np.ndarray  # (d_model,)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def gelu_backward(x, g):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    return g * (0.5 * (1.0 + t) + 0.5 * x * dt)


def project_visual(grid: ImageGrid, proj: ProjectorParams, need_tape: bool = False):
    """Per-token Linear -> GELU -> Linear, order preserved."""
    if grid.tokens.shape[1] != proj.w1.shape[0]:
        raise DimensionError(f"vision dim {grid.tokens.shape[1]} vs projector {proj.w1.shape}")
    pre = grid.tokens @ proj.w1 + proj.b1
    act = gelu(pre)
    out = act @ proj.w2 + proj.b2
    if need_tape:
        return out, {"tokens": grid.tokens, "pre": pre, "act": act}
    return out


def project_visual_backward(tape, proj: ProjectorParams, g_out, grads: dict, prefix: str = "proj."):
    """Accumulate projector gradients; returns gradient w.r.t. vision tokens."""
    def acc(name, val):
        key = prefix + name
        grads[key] = grads[key] + val if key in grads else val

    acc("b2", g_out.sum(axis=0))
    acc("w2", tape["act"].T @ g_out)
    g_act = g_out @ proj.w2.T
    g_pre = gelu_backward(tape["pre"], g_act)
    acc("b1", g_pre.sum(axis=0))
    acc("w1", tape["tokens"].T @ g_pre)
    return g_pre @ proj.w1.T


def init_projector(rng, d_vision: int, d_model: int, dtype=np.float32) -> ProjectorParams:
    b1 = 1.0 / np.sqrt(d_vision)
    b2 = 1.0 / np.sqrt(d_model)
    return ProjectorParams(
        w1=rng.uniform(-b1, b1, size=(d_vision, d_model)).astype(dtype),
        b1=np.zeros(d_model, dtype=dtype),
        w2=rng.uniform(-b2, b2, size=(d_model, d_model)).astype(dtype),
        b2=np.zeros(d_model, dtype=dtype))


def init_patch_embed(rng, patch: int, channels: int, d_vision: int, dtype=np.float32) -> np.ndarray:
    fan_in = patch * patch * channels
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, d_vision)).astype(dtype)
