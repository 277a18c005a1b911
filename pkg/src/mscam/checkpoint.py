"""Single-file binary checkpoints.

Layout::

    8 bytes   magic  b"MSCAMCKP"
    4 bytes   format version, uint32 little-endian
    8 bytes   header length N, uint64 little-endian
    N bytes   UTF-8 JSON header: {"config": ..., "tensors": [{"name", "shape"}...], "meta": ...}
    rest      tensor values, float64 little-endian, in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .model import Model, ModelConfig, init_model
from .tensor import Tensor

MAGIC = b"MSCAMCKP"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def write_tensors(path, config: ModelConfig, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    header = {
        "config": config.to_dict(),
        "tensors": [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    tmp.replace(path)


def read_tensors(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint (only {len(raw)} bytes)")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(raw) < start + hlen:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    offset = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint (tensor {entry['name']!r} incomplete)")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} unexpected trailing bytes")
    return config, tensors, header.get("meta", {})


def save_checkpoint(model: Model, path, meta: dict | None = None) -> None:
    write_tensors(path, model.config, {k: t.data for k, t in model.params.items()}, meta)


def model_from_tensors(config: ModelConfig, tensors: Mapping[str, np.ndarray], prefix: str = "") -> Model:
    template = init_model(config, 0)
    params = {}
    for name, t in template.params.items():
        key = prefix + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint is missing parameter {key!r}")
        arr = tensors[key]
        if arr.shape != t.shape:
            raise CheckpointError(f"parameter {key!r} has shape {arr.shape}, expected {t.shape}")
        params[name] = Tensor(arr.copy(), requires_grad=True, name=name)
    return Model(config, params)


def load_checkpoint(path, expect: Mapping[str, object] | None = None) -> Model:
    """Load a model; ``expect`` pins config fields, e.g. ``{"num_classes": 2}``."""
    config, tensors, _ = read_tensors(path)
    for key, want in (expect or {}).items():
        have = getattr(config, key, None)
        if isinstance(want, (list, tuple)):
            want = tuple(want)
        if have != want:
            raise CheckpointError(f"{path}: config field {key!r} is {have!r}, requested {want!r}")
    return model_from_tensors(config, tensors)
