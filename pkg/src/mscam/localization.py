"""Attention map to boxes, and IOU-based localization scoring."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class BBox:
    """Pixel box: top-left corner plus width and height (all integers)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.x < 0 or self.y < 0 or self.w < 1 or self.h < 1:
            raise ValueError(f"invalid box {self}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_id: int
    score: float


def normalize_map(grid: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant grid maps to all zeros."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = g.min(), g.max()
    if hi > lo:
        return (g - lo) / (hi - lo)
    return np.zeros_like(g)


def _grid(attention) -> np.ndarray:
    return np.asarray(getattr(attention, "grid", attention), dtype=np.float64)


def binarize(attention, tau: float = 0.5) -> np.ndarray:
    """Pixels at or above ``tau`` of the min-max normalized map.

    A constant map is all true unless it is identically zero.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    g = _grid(attention)
    if not np.all(np.isfinite(g)):
        raise ValueError("attention map contains non-finite values")
    lo, hi = g.min(), g.max()
    if hi == lo:
        return np.full(g.shape, hi != 0.0)
    return (g - lo) / (hi - lo) >= tau


def connected_components(mask: np.ndarray) -> list[np.ndarray]:
    """8-connected components as ``(k, 2)`` arrays of (row, col), ordered by first raster pixel."""
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    labels, n = _kernels.label_components(mask)
    if n == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n + 1)
    bounds = np.cumsum(counts)
    w = mask.shape[1]
    comps = []
    for k in range(1, n + 1):
        idx = order[bounds[k - 1]:bounds[k]]
        comps.append(np.stack([idx // w, idx % w], axis=1))
    return comps


def boxes_from_map(attention, tau: float = 0.5, min_area: int = 4, class_id: int | None = None
                   ) -> list[Detection]:
    """Tight boxes around thresholded components, highest peak first."""
    g = _grid(attention)
    if class_id is None:
        class_id = int(getattr(attention, "class_id", 0))
    mask = binarize(g, tau)
    lo, hi = g.min(), g.max()
    norm = normalize_map(g) if hi > lo else np.full(g.shape, float(hi != 0))
    dets = []
    for comp in connected_components(mask):
        if len(comp) < min_area:
            continue
        r0, c0 = comp.min(axis=0)
        r1, c1 = comp.max(axis=0)
        box = BBox(c0, r0, c1 - c0 + 1, r1 - r0 + 1)
        score = float(norm[r0:r1 + 1, c0:c1 + 1].max())
        dets.append(Detection(box, class_id, score))
    dets.sort(key=lambda d: -d.score)
    return dets


def iou(a: BBox, b: BBox) -> float:
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    inter = max(ix, 0) * max(iy, 0)
    if inter == 0:
        return 0.0
    return inter / (a.area + b.area - inter)


def match_count(preds: Sequence[BBox], gts: Sequence[BBox], threshold: float) -> int:
    """Greedy one-to-one matching by descending IOU; pairs need IOU > threshold."""
    pairs = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            v = iou(p, g)
            if v > threshold:
                pairs.append((-v, i, j))
    pairs.sort()
    used_p, used_g = set(), set()
    for _, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
    return len(used_p)


@dataclass
class EvalRow:
    class_id: int
    class_name: str
    iou_threshold: float
    accuracy: float
    afp: float
    n_images: int


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def get(self, class_id: int, threshold: float) -> EvalRow:
        for r in self.rows:
            if r.class_id == class_id and r.iou_threshold == threshold:
                return r
        raise KeyError((class_id, threshold))

    def to_records(self) -> list[dict]:
        return [
            {"class": r.class_name, "iou_threshold": r.iou_threshold, "accuracy": r.accuracy,
             "afp": r.afp, "n_images": r.n_images}
            for r in self.rows
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "iou_threshold", "accuracy", "afp", "n_images"])
        for r in self.rows:
            writer.writerow([r.class_name, repr(r.iou_threshold), repr(r.accuracy), repr(r.afp), r.n_images])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": self.to_records()}, indent=2) + "\n"


def evaluate(detections: Sequence[Sequence[Detection]],
             ground_truths: Sequence[Sequence[tuple[int, BBox]]],
             class_names: Sequence[str] | Mapping[int, str],
             thresholds: Sequence[float] = (0.3, 0.5)) -> EvalReport:
    """Per-class localization accuracy and average false positives.

    Only images annotated with a class are evaluated for that class. An image
    counts as localized when at least one prediction matches a ground-truth
    box with IOU above the threshold; every unmatched prediction on an
    evaluated image is a false positive.
    """
    if len(detections) != len(ground_truths):
        raise ValueError(f"{len(detections)} detection lists for {len(ground_truths)} images")
    names = dict(class_names) if isinstance(class_names, Mapping) else dict(enumerate(class_names))
    for dets in detections:
        for d in dets:
            if d.class_id not in names:
                raise ValueError(f"detection class id {d.class_id} not among configured classes {sorted(names)}")
    for gts in ground_truths:
        for c, _ in gts:
            if c not in names:
                raise ValueError(f"ground-truth class id {c} not among configured classes {sorted(names)}")
    report = EvalReport()
    for c in sorted(names):
        per_image = []
        for dets, gts in zip(detections, ground_truths):
            g = [b for cid, b in gts if cid == c]
            if g:
                per_image.append(([d.bbox for d in dets if d.class_id == c], g))
        n = len(per_image)
        for t in sorted(thresholds):
            correct = fp = 0
            for preds, g in per_image:
                m = match_count(preds, g, t)
                correct += m > 0
                fp += len(preds) - m
            acc = correct / n if n else 0.0
            afp = fp / n if n else 0.0
            report.rows.append(EvalRow(c, str(names[c]), float(t), acc, afp, n))
    return report
