"""Class activation maps per block and their relevance-weighted fusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .localization import normalize_map
from .model import Model
from .tensor import Tensor, bilinear_resize

MODES = ("multiscale", "final_block")


@dataclass
class AttentionMap:
    class_id: int
    grid: np.ndarray
    source: str  # "multiscale" or "block<b>"


def block_cam(model: Model, features, block: int, class_id: int) -> np.ndarray:
    """Head-weighted sum of one block's feature maps (bias excluded).

    ``features`` is a single image's block output, shape ``[N_f, h, w]``.
    """
    B, C = model.config.num_blocks, model.config.num_classes
    if not 0 <= block < B:
        raise IndexError(f"block {block} out of range for a {B}-block model")
    if not 0 <= class_id < C:
        raise IndexError(f"class {class_id} out of range for {C} classes")
    f = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    weight, _ = model.head(block)
    if f.ndim != 3 or f.shape[0] != weight.shape[1]:
        raise ValueError(f"features of shape {f.shape} do not match head of block {block} ({weight.shape[1]} maps)")
    return np.tensordot(weight[class_id], f, axes=1)


def all_block_cams(model: Model, features: list) -> list[np.ndarray]:
    """CAMs for every class from batched block features: list of ``[n, C, h_b, w_b]``."""
    cams = []
    for b, f in enumerate(features):
        f = f.data if isinstance(f, Tensor) else f
        weight, _ = model.head(b)
        cams.append(np.einsum("cj,njhw->nchw", weight, f))
    return cams


def fuse(resized: np.ndarray, weights: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Convex combination of ``[B, H, W]`` resized CAMs with weights ``[B]``."""
    maps = np.stack([normalize_map(m) for m in resized]) if normalize else resized
    return np.tensordot(np.asarray(weights, dtype=np.float64), maps, axes=1)


def _resized_cams(model: Model, image, class_id: int) -> np.ndarray:
    x = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    x = x.reshape(1, 1, *model.config.input_size)
    out = model.forward(x)
    size = model.config.input_size
    return np.stack([
        bilinear_resize(block_cam(model, f.data[0], b, class_id), size)
        for b, f in enumerate(out.block_features)
    ])


def multiscale_map(model: Model, image, class_id: int, normalize: bool = True) -> AttentionMap:
    resized = _resized_cams(model, image, class_id)
    grid = fuse(resized, model.relevance_weights()[class_id], normalize)
    return AttentionMap(class_id, grid, "multiscale")


def final_block_map(model: Model, image, class_id: int, normalize: bool = True) -> AttentionMap:
    """Deepest-block CAM only; the single-scale baseline."""
    resized = _resized_cams(model, image, class_id)
    last = resized[-1]
    grid = normalize_map(last) if normalize else last.copy()
    return AttentionMap(class_id, grid, f"block{model.config.num_blocks - 1}")


def batch_maps(model: Model, images: np.ndarray, mode: str = "multiscale", normalize: bool = True,
               batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities ``[n, C]`` and attention grids ``[n, C, H, W]`` for a stack of images."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    cfg = model.config
    H, W = cfg.input_size
    n = images.shape[0]
    probs = np.empty((n, cfg.num_classes))
    grids = np.empty((n, cfg.num_classes, H, W))
    rel = model.relevance_weights()
    blocks = range(cfg.num_blocks) if mode == "multiscale" else [cfg.num_blocks - 1]
    for s in range(0, n, batch_size):
        out = model.forward(images[s:s + batch_size])
        probs[s:s + batch_size] = out.fused_probs.data
        cams = all_block_cams(model, out.block_features)
        for k in range(out.fused_probs.shape[0]):
            for c in range(cfg.num_classes):
                resized = np.stack([bilinear_resize(cams[b][k, c], (H, W)) for b in blocks])
                w = rel[c] if mode == "multiscale" else np.ones(1)
                grids[s + k, c] = fuse(resized, w, normalize)
    return probs, grids
