"""DenseNet-lite classifier with per-block heads fused by relevance weights.

Each dense block ends in global average pooling and its own linear head, so
every block emits a full vector of class logits. The logits of the blocks
are mixed per class with weights that live on the probability simplex
(a softmax over unconstrained relevance logits) and squashed by a sigmoid.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    avg_pool2d,
    clamp_min,
    concat_channels,
    conv2d,
    fully_connected,
    global_avg_pool,
    log,
    mul,
    relu,
    rms_normalize,
    sigmoid,
    softmax,
    stack,
    tsum,
)

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    num_blocks: int = 3
    layers_per_block: int = 4
    growth_rate: int = 12
    stem_channels: int = 16
    input_size: tuple[int, int] = (64, 64)
    num_classes: int = 2
    kernel_size: int = 3
    feature_norm: str = "rms"

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        for name in ("num_blocks", "layers_per_block", "growth_rate", "stem_channels", "num_classes", "kernel_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.feature_norm not in ("rms", "none"):
            raise ValueError(f"feature_norm must be 'rms' or 'none', got {self.feature_norm!r}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        # stride-2 stem conv and a 2x pool, then one halving per later block
        factor = 2 ** (self.num_blocks + 1)
        for axis, extent in zip("HW", self.input_size):
            if extent % factor:
                raise ValueError(
                    f"input {axis}={extent} must be divisible by {factor} for {self.num_blocks} blocks"
                )

    def block_channels(self, block: int) -> int:
        """Number of feature maps at the output of ``block`` (0-based)."""
        return self.stem_channels + (block + 1) * self.layers_per_block * self.growth_rate

    def block_extent(self, block: int) -> tuple[int, int]:
        div = 2 ** (block + 2)
        return self.input_size[0] // div, self.input_size[1] // div

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardOutput:
    block_features: list[Tensor]
    block_logits: list[Tensor]
    fused_probs: Tensor


def _xavier(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Model:
    """Parameters plus the forward pass. Build with :func:`init_model`."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def copy(self) -> "Model":
        return Model(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()},
        )

    def head(self, block: int) -> tuple[np.ndarray, np.ndarray]:
        """FC weight ``[C, N_f(b)]`` and bias ``[C]`` of the given block."""
        return self.params[f"head{block}.weight"].data, self.params[f"head{block}.bias"].data

    def relevance_weights(self) -> np.ndarray:
        """Per-class simplex weights over blocks, shape ``[C, B]``."""
        a = self.params["relevance_logits"].data
        z = a - a.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def forward(self, images, tape: Tape | None = None) -> ForwardOutput:
        if tape is not None:
            with tape:
                return self._forward(images)
        return self._forward(images)

    __call__ = forward

    def _forward(self, images) -> ForwardOutput:
        cfg = self.config
        x = images if isinstance(images, Tensor) else Tensor(images)
        expected = (1, *cfg.input_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"model expects images of shape [b, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}")
        p = self.params
        pad = cfg.kernel_size // 2
        x = relu(conv2d(x, p["stem.weight"], p["stem.bias"], stride=2, padding=pad))
        x = avg_pool2d(x, 2)
        features, logits = [], []
        for b in range(cfg.num_blocks):
            if b > 0:
                x = avg_pool2d(x, 2)
            maps = [x]
            for k in range(cfg.layers_per_block):
                inp = maps[0] if len(maps) == 1 else concat_channels(maps)
                y = conv2d(inp, p[f"block{b}.layer{k}.weight"], p[f"block{b}.layer{k}.bias"], stride=1, padding=pad)
                maps.append(relu(y))
            x = concat_channels(maps)
            f = rms_normalize(x) if cfg.feature_norm == "rms" else x
            features.append(f)
            logits.append(fully_connected(global_avg_pool(f), p[f"head{b}.weight"], p[f"head{b}.bias"]))
        w = softmax(p["relevance_logits"], axis=1)
        fused = tsum(mul(stack(logits, axis=-1), w), axis=-1)
        return ForwardOutput(features, logits, sigmoid(fused))


def init_model(config: ModelConfig, seed: int) -> Model:
    """Xavier-uniform weights, zero biases, and uniform 1/B relevance weights."""
    rng = np.random.default_rng(seed)
    k = config.kernel_size
    params: dict[str, Tensor] = {}

    def conv(name, co, ci):
        params[f"{name}.weight"] = Tensor(_xavier(rng, (co, ci, k, k), ci * k * k, co * k * k))
        params[f"{name}.bias"] = Tensor(np.zeros(co))

    conv("stem", config.stem_channels, 1)
    for b in range(config.num_blocks):
        cin = config.block_channels(b - 1) if b > 0 else config.stem_channels
        for layer in range(config.layers_per_block):
            conv(f"block{b}.layer{layer}", config.growth_rate, cin + layer * config.growth_rate)
        nf = config.block_channels(b)
        params[f"head{b}.weight"] = Tensor(_xavier(rng, (config.num_classes, nf), nf, config.num_classes))
        params[f"head{b}.bias"] = Tensor(np.zeros(config.num_classes))
    params["relevance_logits"] = Tensor(np.zeros((config.num_classes, config.num_blocks)))
    for name, t in params.items():
        t.requires_grad = True
        t.name = name
    return Model(config, params)


def forward(model: Model, images, record_tape: bool | Tape = False) -> ForwardOutput:
    """Functional wrapper; pass a :class:`Tape` (or ``True`` to use the active one)."""
    if isinstance(record_tape, Tape):
        return model.forward(images, tape=record_tape)
    return model.forward(images)


def relevance_weights(model: Model) -> np.ndarray:
    return model.relevance_weights()


def class_balance_factors(labels) -> np.ndarray:
    """Fraction of negative samples per class over the whole label set."""
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ValueError("class_balance_factors needs a non-empty [N, C] label matrix")
    return (y == 0).sum(axis=0) / y.shape[0]


def loss(fused_probs: Tensor, labels, beta: Sequence[float]) -> Tensor:
    """Class-balanced binary cross entropy summed over classes and batch.

    Positive terms are weighted by ``beta[c]``, negative terms by
    ``1 - beta[c]``. Log arguments are floored at 1e-12.
    """
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (fused_probs.shape[-1],):
        raise ShapeError(f"beta has length {beta.size}, expected {fused_probs.shape[-1]} classes")
    if y.shape != fused_probs.shape:
        raise ShapeError(f"labels shape {y.shape} does not match probabilities {fused_probs.shape}")
    pos = log(clamp_min(fused_probs, LOG_FLOOR))
    neg = log(clamp_min(1.0 - fused_probs, LOG_FLOOR))
    total = mul(pos, beta * y) + mul(neg, (1.0 - beta) * (1.0 - y))
    return mul(tsum(total), -1.0)
