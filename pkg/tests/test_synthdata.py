import filecmp
import json

import numpy as np
import pytest

from mscam.synthdata import (
    ClassSpec,
    default_specs,
    generate,
    load_dataset,
    save_dataset,
    split,
    split_sizes,
    splits_from_tags,
)


def small_specs():
    return [ClassSpec("dot", "disk", (3, 5), (0.5, 0.8), 0.5), ClassSpec("slab", "rectangle", (8, 12), (0.3, 0.5), 0.6)]


class TestGenerate:
    def test_deterministic(self):
        a = generate(small_specs(), 20, (32, 32), 0.1, 9)
        b = generate(small_specs(), 20, (32, 32), 0.1, 9)
        for x, y in zip(a.samples, b.samples):
            assert x.image.tobytes() == y.image.tobytes()
            assert np.array_equal(x.labels, y.labels) and x.gt_boxes == y.gt_boxes

    def test_seed_changes_output(self):
        a = generate(small_specs(), 5, (32, 32), 0.1, 1)
        b = generate(small_specs(), 5, (32, 32), 0.1, 2)
        assert any(x.image.tobytes() != y.image.tobytes() for x, y in zip(a.samples, b.samples))

    def test_full_prevalence(self):
        specs = [ClassSpec("always", "disk", (3, 5), prevalence=1.0)]
        data = generate(specs, 50, (16, 16), 0.05, 0)
        assert all(s.labels[0] == 1 for s in data.samples)

    def test_prevalence_within_three_sigma(self):
        specs = default_specs()
        data = generate(specs, 2000, (64, 64), 0.1, 11)
        labels = np.stack([s.labels for s in data.samples])
        for c, spec in enumerate(specs):
            sigma = np.sqrt(2000 * spec.prevalence * (1 - spec.prevalence))
            assert abs(labels[:, c].sum() - 2000 * spec.prevalence) <= 3 * sigma

    def test_labels_match_boxes_and_boxes_are_tight(self):
        data = generate(small_specs(), 40, (32, 32), 0.0, 4)
        for s in data.samples:
            present = {c for c, _ in s.gt_boxes}
            assert present == {c for c in range(2) if s.labels[c] == 1}
            for _, b in s.gt_boxes:
                assert b.x + b.w <= 32 and b.y + b.h <= 32
            if len(s.gt_boxes) == 1:
                # noise-free single shape: the box is the tight support of the raised pixels
                _, b = s.gt_boxes[0]
                ys, xs = np.nonzero(s.image > 0.2 + 1e-9)
                assert (xs.min(), ys.min(), xs.max() - xs.min() + 1, ys.max() - ys.min() + 1) == (b.x, b.y, b.w, b.h)

    def test_values_quantized(self):
        img = generate(small_specs(), 3, (32, 32), 0.2, 0).samples[0].image
        assert img.min() >= 0 and img.max() <= 1
        np.testing.assert_array_equal(np.round(img * 255) / 255, img)

    def test_shape_too_large(self):
        with pytest.raises(ValueError, match="fit"):
            generate([ClassSpec("big", "disk", (10, 40))], 2, (32, 32), 0.1, 0)

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            ClassSpec("x", "star", (2, 3))
        with pytest.raises(ValueError):
            ClassSpec("x", "disk", (2, 3), prevalence=0.0)
        with pytest.raises(ValueError):
            ClassSpec("x", "disk", (2, 3), intensity_range=(0.5, 0.5))


class TestSplit:
    def test_sizes(self):
        assert split_sizes(100, (0.7, 0.1, 0.2)) == (70, 10, 20)
        assert split_sizes(2400, (0.7, 0.1, 0.2)) == (1680, 240, 480)

    def test_disjoint_and_exhaustive(self):
        data = generate(small_specs(), 100, (16, 16), 0.1, 0)
        parts = split(data, seed=3)
        idx = [set(p.indices.tolist()) for p in parts]
        assert set().union(*idx) == set(range(100))
        assert all(not (a & b) for i, a in enumerate(idx) for b in idx[i + 1:])
        assert [len(p) for p in parts] == [70, 10, 20]

    def test_deterministic(self):
        data = generate(small_specs(), 50, (16, 16), 0.1, 0)
        a = [p.indices for p in split(data, seed=1)]
        b = [p.indices for p in split(data, seed=1)]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_boxes_only_for_test(self):
        data = generate(small_specs(), 30, (16, 16), 0.1, 0)
        tr, va, te = split(data, seed=0)
        assert tr.gt_boxes(0) is None and va.gt_boxes(0) is None
        assert isinstance(te.gt_boxes(0), list)

    def test_errors(self):
        data = generate(small_specs(), 5, (16, 16), 0.1, 0)
        with pytest.raises(ValueError, match="empty"):
            split(data, seed=0)
        with pytest.raises(ValueError, match="sum"):
            split_sizes(100, (0.5, 0.1, 0.1))


class TestOnDisk:
    def test_round_trip_and_bytes(self, tmp_path):
        specs = small_specs()
        data = generate(specs, 12, (16, 16), 0.1, 5)
        split(data, (0.5, 0.25, 0.25), seed=5)
        save_dataset(data, tmp_path / "a", specs)
        again = generate(specs, 12, (16, 16), 0.1, 5)
        split(again, (0.5, 0.25, 0.25), seed=5)
        save_dataset(again, tmp_path / "b", specs)
        cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        for name in (tmp_path / "a" / "images").iterdir():
            assert name.read_bytes() == (tmp_path / "b" / "images" / name.name).read_bytes()
            assert name.read_bytes().startswith(b"P5")

        loaded = load_dataset(tmp_path / "a")
        for x, y in zip(loaded.samples, data.samples):
            np.testing.assert_array_equal(x.image, y.image)
            assert x.gt_boxes == y.gt_boxes
        assert loaded.split_tags == data.split_tags
        tr, va, te = splits_from_tags(loaded)
        assert [len(tr), len(va), len(te)] == [6, 3, 3]

    def test_manifest_records(self, tmp_path):
        data = generate(small_specs(), 4, (16, 16), 0.1, 0)
        split(data, (0.5, 0.25, 0.25), seed=0)
        save_dataset(data, tmp_path)
        recs = [json.loads(l) for l in (tmp_path / "manifest.jsonl").read_text().splitlines()]
        assert len(recs) == 4
        assert set(recs[0]) == {"file", "labels", "gt_boxes", "split"}

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)
