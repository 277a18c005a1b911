import json

import numpy as np
import pytest
import yaml
from PIL import Image

from mscam import config as config_mod
from mscam.attention import multiscale_map
from mscam.checkpoint import load_checkpoint
from mscam.cli import main
from mscam.graymap import read_pgm
from mscam.localization import boxes_from_map

SMALL = {
    "seed": 0,
    "data": {"n": 60, "image_size": [32, 32]},
    "model": {"num_blocks": 3, "layers_per_block": 1, "growth_rate": 4, "stem_channels": 4},
    "train": {"max_epochs": 2, "batch_size": 16},
}
SMALL["data"]["classes"] = [
    {"name": "small", "shape": "disk", "size_range": [3, 6]},
    {"name": "large", "shape": "ellipse", "size_range": [12, 20], "intensity_range": [0.3, 0.5]},
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root, cfg


def lines(path):
    return path.read_text().splitlines()


class TestConfig:
    def test_print_config_round_trips(self, capsys):
        assert main(["--print-config"]) == 0
        text = capsys.readouterr().out
        cfg = config_mod.from_dict(yaml.safe_load(text))
        assert cfg.to_yaml() == text
        assert cfg.data.n == 2400 and cfg.train.lr == 1e-3

    def test_seed_flag(self, capsys):
        main(["--seed", "9", "--print-config"])
        assert yaml.safe_load(capsys.readouterr().out)["seed"] == 9

    def test_unknown_key(self, tmp_path, capsys):
        p = tmp_path / "c.yaml"
        p.write_text("train:\n  learning_rate: 0.1\n")
        assert main(["--config", str(p), "--print-config"]) != 0
        assert "learning_rate" in capsys.readouterr().err

    def test_invalid_fraction_sum(self, tmp_path, capsys):
        p = tmp_path / "c.yaml"
        p.write_text("data:\n  fractions: [0.5, 0.1, 0.1]\n")
        assert main(["gen-data", "--config", str(p), "--out", str(tmp_path / "d")]) != 0
        assert "fractions" in capsys.readouterr().err

    def test_indivisible_image_size(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("data:\n  image_size: [40, 40]\n")
        with pytest.raises(config_mod.ConfigError, match="divisible"):
            config_mod.load(p)


class TestGenData:
    def test_default_split_sizes(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "d")]) == 0
        recs = [json.loads(l) for l in lines(tmp_path / "d" / "manifest.jsonl")]
        counts = {s: sum(r["split"] == s for r in recs) for s in ("train", "val", "test")}
        assert len(recs) == 2400 and counts == {"train": 1680, "val": 240, "test": 480}

    def test_seed_reproducible(self, workspace, tmp_path):
        _, cfg = workspace
        for name in ("a", "b"):
            assert main(["gen-data", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()

    def test_refuses_non_empty_out(self, workspace, capsys):
        root, cfg = workspace
        assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) != 0
        assert "--force" in capsys.readouterr().err
        assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data"), "--force"]) == 0


class TestTrain:
    def test_outputs(self, workspace):
        root, _ = workspace
        run = root / "run"
        assert {p.name for p in run.iterdir()} >= {"model.ckpt", "state.ckpt", "history.csv", "relevance.json"}
        rel = np.array(json.loads((run / "relevance.json").read_text())["relevance_weights"])
        assert np.all(rel >= 0) and np.all(np.abs(rel.sum(axis=1) - 1) <= 1e-9)
        assert len(lines(run / "history.csv")) == 3

    def test_max_epochs_one(self, workspace, tmp_path):
        root, cfg = workspace
        assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(tmp_path),
                     "--max-epochs", "1"]) == 0
        assert len(lines(tmp_path / "history.csv")) == 2

    def test_resume_matches_uninterrupted(self, workspace, tmp_path):
        root, cfg = workspace
        data = str(root / "data")
        assert main(["train", "--config", str(cfg), "--data", data, "--out", str(tmp_path), "--max-epochs", "1"]) == 0
        assert main(["train", "--config", str(cfg), "--data", data, "--out", str(tmp_path),
                     "--resume", str(tmp_path / "state.ckpt")]) == 0
        assert (tmp_path / "history.csv").read_bytes() == (root / "run" / "history.csv").read_bytes()

    def test_history_reproducible(self, workspace, tmp_path):
        root, cfg = workspace
        assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "history.csv").read_bytes() == (root / "run" / "history.csv").read_bytes()
        assert (tmp_path / "model.ckpt").read_bytes() == (root / "run" / "model.ckpt").read_bytes()


class TestEval:
    def test_reports(self, workspace, tmp_path):
        root, cfg = workspace
        ckpt = str(root / "run" / "model.ckpt")
        for mode in ("multiscale", "final_block"):
            assert main(["eval", "--config", str(cfg), "--checkpoint", ckpt, "--data", str(root / "data"),
                         "--out", str(tmp_path), "--mode", mode]) == 0
        for mode in ("multiscale", "final_block"):
            rows = lines(tmp_path / f"report_{mode}.csv")
            assert rows[0] == "class,iou_threshold,accuracy,afp,n_images"
            assert [r.split(",")[:2] for r in rows[1:]] == [["small", "0.3"], ["small", "0.5"],
                                                              ["large", "0.3"], ["large", "0.5"]]
        first = (tmp_path / "report_multiscale.json").read_bytes()
        main(["eval", "--config", str(cfg), "--checkpoint", ckpt, "--data", str(root / "data"),
              "--out", str(tmp_path), "--mode", "multiscale"])
        assert (tmp_path / "report_multiscale.json").read_bytes() == first

    def test_missing_checkpoint(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        assert main(["eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "nope"),
                     "--data", str(root / "data"), "--out", str(tmp_path)]) != 0
        assert "error" in capsys.readouterr().err


class TestLocalize:
    def test_outputs(self, workspace, tmp_path):
        root, cfg = workspace
        image = sorted((root / "data" / "images").iterdir())[0]
        ckpt = root / "run" / "model.ckpt"
        assert main(["localize", "--config", str(cfg), "--checkpoint", str(ckpt), "--image", str(image),
                     "--class", "small", "--tau", "0.4", "--out", str(tmp_path)]) == 0
        names = {p.name for p in tmp_path.iterdir()}
        assert sorted(n for n in names if n.endswith("_cam.pgm")) == ["block1_cam.pgm", "block2_cam.pgm", "block3_cam.pgm"]
        assert "overlay.png" in names and "weights.txt" in names

        model = load_checkpoint(ckpt)
        sidecar = dict(l.split(" ", 1) for l in lines(tmp_path / "weights.txt"))
        w = model.relevance_weights()[0]
        assert [float(sidecar[f"block{b + 1}"]) for b in range(3)] == list(w)

        img = read_pgm(image)
        expected = boxes_from_map(multiscale_map(model, img, 0), 0.4, 4, class_id=0)
        got = json.loads((tmp_path / "boxes.json").read_text())
        assert [(d["x"], d["y"], d["w"], d["h"]) for d in got] == [(d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h)
                                                                   for d in expected]
        rgb = np.asarray(Image.open(tmp_path / "overlay.png"))
        for d in expected:
            b = d.bbox
            for y, x in ((b.y, b.x), (b.y + b.h - 1, b.x + b.w - 1)):
                assert tuple(rgb[y, x]) == (0, 255, 0)

    def test_wrong_image_size(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        bad = tmp_path / "bad.pgm"
        Image.fromarray(np.zeros((8, 8), np.uint8)).save(bad, format="PPM")
        assert main(["localize", "--config", str(cfg), "--checkpoint", str(root / "run" / "model.ckpt"),
                     "--image", str(bad), "--class", "small", "--out", str(tmp_path / "o")]) != 0
        assert "expects" in capsys.readouterr().err


def test_inspect_weights(workspace, capsys):
    root, cfg = workspace
    assert main(["inspect-weights", "--config", str(cfg), "--checkpoint", str(root / "run" / "model.ckpt"),
                 "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["class_names"] == ["small", "large"]
    assert np.allclose(np.sum(out["relevance_weights"], axis=1), 1.0, atol=1e-9)
