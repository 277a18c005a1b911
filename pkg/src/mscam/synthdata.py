"""Deterministic multi-label shape images with held-out box annotations.

Images are single-channel, quantized to 8 bits so the in-memory dataset and
its on-disk P5 copy hold identical values. Each sample draws its own RNG
stream from ``(seed, index)``, so output does not depend on generation
order.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graymap import read_pgm, write_pgm
from .localization import BBox

SHAPES = ("disk", "ellipse", "rectangle")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ClassSpec:
    name: str
    shape: str
    size_range: tuple[int, int]
    intensity_range: tuple[float, float] = (0.5, 0.8)
    prevalence: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "size_range", tuple(int(v) for v in self.size_range))
        object.__setattr__(self, "intensity_range", tuple(float(v) for v in self.intensity_range))
        if self.shape not in SHAPES:
            raise ValueError(f"class {self.name!r}: unknown shape {self.shape!r}, expected one of {SHAPES}")
        lo, hi = self.size_range
        if not 1 <= lo <= hi:
            raise ValueError(f"class {self.name!r}: size_range must satisfy 1 <= min <= max, got {self.size_range}")
        ilo, ihi = self.intensity_range
        if not 0.0 <= ilo < ihi <= 1.0:
            raise ValueError(f"class {self.name!r}: intensity_range must satisfy 0 <= lo < hi <= 1")
        if not 0.0 < self.prevalence <= 1.0:
            raise ValueError(f"class {self.name!r}: prevalence must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size_range"] = list(self.size_range)
        d["intensity_range"] = list(self.intensity_range)
        return d


def default_specs() -> list[ClassSpec]:
    """Small disks (nodule-like) and large ellipses (cardiomegaly-like)."""
    return [
        ClassSpec("small", "disk", (4, 8), (0.5, 0.8), 0.5),
        ClassSpec("large", "ellipse", (24, 48), (0.3, 0.5), 0.5),
    ]


@dataclass
class Sample:
    image: np.ndarray
    labels: np.ndarray
    gt_boxes: list[tuple[int, BBox]]


@dataclass
class Dataset:
    samples: list[Sample]
    class_names: list[str]
    image_size: tuple[int, int]
    split_tags: list[str] | None = None
    file_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, name: str, indices: Sequence[int]) -> "Split":
        return Split(name, self, np.asarray(indices, dtype=np.int64))


class Split:
    """A view over a subset of a dataset.

    Only the ``test`` split exposes box annotations; for the other splits
    :meth:`gt_boxes` returns ``None``.
    """

    def __init__(self, name: str, dataset: Dataset, indices: np.ndarray):
        self.name = name
        self.dataset = dataset
        self.indices = indices
        self._images = None
        self._labels = None

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def class_names(self) -> list[str]:
        return self.dataset.class_names

    @property
    def images(self) -> np.ndarray:
        """Stacked images, shape ``[n, 1, H, W]``."""
        if self._images is None:
            self._images = np.stack([self.dataset.samples[i].image for i in self.indices])[:, None]
        return self._images

    @property
    def labels(self) -> np.ndarray:
        if self._labels is None:
            self._labels = np.stack([self.dataset.samples[i].labels for i in self.indices])
        return self._labels

    def gt_boxes(self, k: int) -> list[tuple[int, BBox]] | None:
        if self.name != "test":
            return None
        return list(self.dataset.samples[self.indices[k]].gt_boxes)


def _shape_mask(shape: str, h: int, w: int) -> np.ndarray:
    if shape == "rectangle":
        return np.ones((h, w), dtype=bool)
    yy = (np.arange(h) + 0.5 - h / 2) / (h / 2)
    xx = (np.arange(w) + 0.5 - w / 2) / (w / 2)
    return yy[:, None] ** 2 + xx[None, :] ** 2 <= 1.0


def _validate(specs: Sequence[ClassSpec], image_size: tuple[int, int]) -> None:
    if not specs:
        raise ValueError("at least one class spec is required")
    H, W = image_size
    for s in specs:
        if s.size_range[1] >= min(H, W):
            raise ValueError(
                f"class {s.name!r}: max size {s.size_range[1]} does not fit in a {H}x{W} frame"
            )


def render_sample(specs: Sequence[ClassSpec], image_size: tuple[int, int], noise_sigma: float,
                  rng: np.random.Generator, background: float = 0.2) -> Sample:
    H, W = image_size
    img = np.full((H, W), background)
    labels = np.zeros(len(specs))
    boxes: list[tuple[int, BBox]] = []
    for c, spec in enumerate(specs):
        if rng.random() >= spec.prevalence:
            continue
        lo, hi = spec.size_range
        bh = int(rng.integers(lo, hi + 1))
        bw = bh if spec.shape == "disk" else int(rng.integers(lo, hi + 1))
        y0 = int(rng.integers(0, H - bh + 1))
        x0 = int(rng.integers(0, W - bw + 1))
        intensity = rng.uniform(*spec.intensity_range)
        mask = _shape_mask(spec.shape, bh, bw)
        img[y0:y0 + bh, x0:x0 + bw] += intensity * mask
        ys, xs = np.nonzero(mask)
        boxes.append((c, BBox(x0 + int(xs.min()), y0 + int(ys.min()),
                              int(xs.max() - xs.min()) + 1, int(ys.max() - ys.min()) + 1)))
        labels[c] = 1.0
    img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return Sample(img, labels, boxes)


def generate(specs: Sequence[ClassSpec], n: int, image_size: tuple[int, int] = (64, 64),
             noise_sigma: float = 0.1, seed: int = 0) -> Dataset:
    """Generate ``n`` samples; each class is present independently with its prevalence."""
    if n < 1:
        raise ValueError("n must be at least 1")
    image_size = tuple(int(v) for v in image_size)
    _validate(specs, image_size)
    samples = [
        render_sample(specs, image_size, noise_sigma, np.random.default_rng([seed, i]))
        for i in range(n)
    ]
    return Dataset(samples, [s.name for s in specs], image_size,
                   file_names=[f"img_{i:05d}.pgm" for i in range(n)])


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three nonnegative numbers summing to 1, got {list(fractions)}")
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    for name, k in zip(SPLITS, (n_train, n_val, n_test)):
        if k <= 0:
            raise ValueError(f"{name} split would be empty for n={n} and fractions {list(fractions)}")
    return n_train, n_val, n_test


def split(dataset: Dataset, fractions: Sequence[float] = (0.7, 0.1, 0.2), seed: int = 0
          ) -> tuple[Split, Split, Split]:
    """Random disjoint train/val/test partition; also stamps ``dataset.split_tags``."""
    n_train, n_val, _ = split_sizes(len(dataset), fractions)
    perm = np.random.default_rng([seed, 0x5B1]).permutation(len(dataset))
    parts = (np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]), np.sort(perm[n_train + n_val:]))
    tags = [""] * len(dataset)
    for name, idx in zip(SPLITS, parts):
        for i in idx:
            tags[i] = name
    dataset.split_tags = tags
    return tuple(dataset.subset(name, idx) for name, idx in zip(SPLITS, parts))


def splits_from_tags(dataset: Dataset) -> tuple[Split, Split, Split]:
    if dataset.split_tags is None:
        raise ValueError("dataset has no split tags")
    tags = np.asarray(dataset.split_tags)
    return tuple(dataset.subset(name, np.nonzero(tags == name)[0]) for name in SPLITS)


# ---------------------------------------------------------------------------
# on-disk layout: <dir>/images/*.pgm + <dir>/manifest.jsonl + <dir>/dataset.json
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, out_dir, specs: Iterable[ClassSpec] | None = None) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(dataset.samples):
        name = dataset.file_names[i]
        write_pgm(out / "images" / name, s.image)
        rec = {
            "file": f"images/{name}",
            "labels": [int(v) for v in s.labels],
            "gt_boxes": [{"class_id": c, "x": b.x, "y": b.y, "w": b.w, "h": b.h} for c, b in s.gt_boxes],
            "split": dataset.split_tags[i] if dataset.split_tags else None,
        }
        lines.append(json.dumps(rec, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    meta = {
        "class_names": dataset.class_names,
        "image_size": list(dataset.image_size),
        "specs": [s.to_dict() for s in specs] if specs is not None else None,
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    manifest = root / "manifest.jsonl"
    if not manifest.is_file():
        raise FileNotFoundError(f"no manifest.jsonl in {root}")
    meta = json.loads((root / "dataset.json").read_text())
    samples, names, tags = [], [], []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            boxes = [(int(b["class_id"]), BBox(b["x"], b["y"], b["w"], b["h"])) for b in rec["gt_boxes"]]
            labels = np.asarray(rec["labels"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{manifest}:{lineno}: malformed record ({exc})") from exc
        image = read_pgm(root / rec["file"])
        samples.append(Sample(image, labels, boxes))
        names.append(Path(rec["file"]).name)
        tags.append(rec.get("split"))
    has_tags = all(t is not None for t in tags)
    return Dataset(samples, list(meta["class_names"]), tuple(meta["image_size"]),
                   split_tags=tags if has_tags else None, file_names=names)
