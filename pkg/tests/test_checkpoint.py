import numpy as np
import pytest
from conftest import tiny_config

from mscam.checkpoint import MAGIC, CheckpointError, load_checkpoint, read_tensors, save_checkpoint
from mscam.model import init_model


def test_round_trip_bit_exact(tiny_model, tmp_path, rng):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny_model, path)
    loaded = load_checkpoint(path)
    x = rng.random((3, 1, 16, 16))
    a, b = tiny_model.forward(x), loaded.forward(x)
    assert a.fused_probs.data.tobytes() == b.fused_probs.data.tobytes()
    for la, lb in zip(a.block_logits, b.block_logits):
        assert la.data.tobytes() == lb.data.tobytes()
    assert loaded.config == tiny_model.config


def test_file_layout(tiny_model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny_model, path, meta={"note": "x"})
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    n_values = sum(p.data.size for p in tiny_model.params.values())
    config, tensors, meta = read_tensors(path)
    assert meta == {"note": "x"}
    assert raw.endswith(tiny_model.params["relevance_logits"].data.astype("<f8").tobytes())
    assert sum(t.size for t in tensors.values()) == n_values


@pytest.mark.parametrize("cut", [4, 40, -8])
def test_truncated(tiny_model, tmp_path, cut):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny_model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:cut])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_trailing_bytes(tiny_model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny_model, path)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_version_mismatch(tiny_model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny_model, path)
    raw = bytearray(path.read_bytes())
    raw[8] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_class_count_mismatch_names_field(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(init_model(tiny_config(num_classes=3), 0), path)
    with pytest.raises(CheckpointError, match="num_classes"):
        load_checkpoint(path, expect={"num_classes": 2})
    assert load_checkpoint(path, expect={"num_classes": 3}).config.num_classes == 3


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"hello world, this is not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
