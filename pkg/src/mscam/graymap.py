"""Image file helpers: 8-bit P5 graymaps and PNG overlays."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image, ImageDraw


def to_uint8(grid: np.ndarray, rescale: bool = False) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64)
    if rescale:
        lo, hi = g.min(), g.max()
        g = (g - lo) / (hi - lo) if hi > lo else np.zeros_like(g)
    return np.round(np.clip(g, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, grid: np.ndarray, rescale: bool = False) -> None:
    """Write a 2-D array in [0, 1] (or min-max rescaled) as binary P5."""
    Image.fromarray(to_uint8(grid, rescale), mode="L").save(Path(path), format="PPM")


def read_pgm(path) -> np.ndarray:
    try:
        with Image.open(Path(path)) as im:
            if im.mode != "L":
                raise ValueError(f"{path}: expected an 8-bit graymap, got mode {im.mode}")
            arr = np.asarray(im, dtype=np.float64)
    except OSError as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def write_overlay_png(path, image: np.ndarray, attention: np.ndarray, boxes: Iterable = (),
                      alpha: float = 0.5) -> None:
    """Alpha-blend a min-max scaled attention map (red) over a grayscale image and draw boxes."""
    base = to_uint8(image).astype(np.float64)
    heat = to_uint8(attention, rescale=True).astype(np.float64)
    rgb = np.stack([base, base, base], axis=-1)
    rgb[..., 0] = (1 - alpha) * rgb[..., 0] + alpha * heat
    rgb[..., 1] = (1 - alpha) * rgb[..., 1]
    rgb[..., 2] = (1 - alpha) * rgb[..., 2]
    im = Image.fromarray(np.round(rgb).astype(np.uint8), mode="RGB")
    draw = ImageDraw.Draw(im)
    for b in boxes:
        draw.rectangle([b.x, b.y, b.x + b.w - 1, b.y + b.h - 1], outline=(0, 255, 0))
    im.save(Path(path), format="PNG")
