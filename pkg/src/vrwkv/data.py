"""Synthetic visual-QA data: colored grids with cell-lookup questions.

Every sample is fully determined by its seed stream: an image split into
grid_size x grid_size colored cells, a query naming one cell, and the color
name of that cell as the answer. Answers are balanced by cycling the target
color, so the majority class stays near 1/palette_size.

Each cell carries a fixed per-position texture (a deterministic half/full
brightness pattern shared by every sample). Flat identical cells would leave
the patch tokens with no positional content at all, which no content-based
recall could recover; the texture plays the role a real vision encoder's
position embedding plays, giving every cell a distinct high-dimensional
signature while each pixel keeps the cell's hue, so the answer stays the
base color name, fully determined by image plus question.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PALETTE = [
    ("red", (1.0, 0.0, 0.0)),
    ("green", (0.0, 1.0, 0.0)),
    ("blue", (0.0, 0.0, 1.0)),
    ("yellow", (1.0, 1.0, 0.0)),
    ("cyan", (0.0, 1.0, 1.0)),
    ("magenta", (1.0, 0.0, 1.0)),
    ("white", (1.0, 1.0, 1.0)),
    ("gray", (0.5, 0.5, 0.5)),
]


@dataclass
class SyntheticSample:
    image: np.ndarray      # (px, px, 3) float32 in [0, 1]
    instruction: str
    answer: str
    cell: tuple[int, int]
    seed: int


def color_names(palette_size: int) -> list[str]:
    return [name for name, _ in PALETTE[:palette_size]]


def cell_patterns(grid_size: int, cell_px: int) -> np.ndarray:
    """Per-cell brightness textures in {0.5, 1.0}, fixed for a grid geometry.

    Shared by every sample and dataset (the texture is part of the task, like
    the frozen encoder), so position is recoverable from pixel content.
    """
    rng = np.random.default_rng((7919, grid_size, cell_px))
    bits = rng.integers(0, 2, size=(grid_size, grid_size, cell_px, cell_px, 1))
    return (0.5 + 0.5 * bits).astype(np.float32)


def gen_synthetic(seed: int, n: int, grid_size: int = 4, palette_size: int = 4,
                  img_px: int = 32) -> list[SyntheticSample]:
    if not 1 <= palette_size <= len(PALETTE):
        raise ValueError(f"palette_size must be in [1, {len(PALETTE)}]")
    if img_px % grid_size:
        raise ValueError(f"img_px {img_px} not divisible by grid_size {grid_size}")
    rng = np.random.default_rng(seed)
    rgb = np.array([c for _, c in PALETTE[:palette_size]], dtype=np.float32)
    cell_px = img_px // grid_size
    patterns = cell_patterns(grid_size, cell_px)  # (g, g, px, px, 1)
    samples = []
    for i in range(n):
        target_color = i % palette_size  # balanced answers by construction
        r = int(rng.integers(grid_size))
        c = int(rng.integers(grid_size))
        cells = rng.integers(palette_size, size=(grid_size, grid_size))
        cells[r, c] = target_color
        colored = rgb[cells][:, :, None, None, :] * patterns  # (g, g, px, px, 3)
        image = colored.transpose(0, 2, 1, 3, 4).reshape(img_px, img_px, 3)
        samples.append(SyntheticSample(
            image=np.ascontiguousarray(image, dtype=np.float32),
            instruction=f"what color is cell ({r},{c})?",
            answer=PALETTE[target_color][0],
            cell=(r, c),
            seed=seed))
    return samples
