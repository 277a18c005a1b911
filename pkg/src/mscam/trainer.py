"""Mini-batch Adam training with plateau learning-rate decay."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .checkpoint import model_from_tensors, read_tensors, write_tensors
from .model import Model, class_balance_factors, loss
from .tensor import Tape, backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    plateau_factor: float = 0.1
    plateau_patience: int = 5
    plateau_threshold: float = 1e-6
    max_epochs: int = 30
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    min_lr: float = 1e-6

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.max_epochs < 0 or self.plateau_patience < 1:
            raise ValueError("max_epochs must be nonnegative and plateau_patience positive")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray | None], state: AdamState,
              lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# plateau schedule
# ---------------------------------------------------------------------------


@dataclass
class PlateauSchedule:
    patience: int = 5
    factor: float = 0.1
    threshold: float = 1e-6
    best: float = float("inf")
    bad_epochs: int = 0

    def step(self, val_loss: float, lr: float) -> float:
        """Feed one epoch's validation loss; return the learning rate for the next epoch."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad_epochs = 0
            return lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.bad_epochs = 0
            return lr * self.factor
        return lr


def plateau_schedule(val_losses, patience: int, factor: float, current_lr: float,
                     threshold: float = 1e-6) -> float:
    """Replay a validation-loss history through a fresh schedule and return the final lr."""
    if len(val_losses) == 0:
        raise ValueError("history must be non-empty")
    sched = PlateauSchedule(patience, factor, threshold)
    lr = current_lr
    for v in val_losses:
        lr = sched.step(float(v), lr)
    return lr


# ---------------------------------------------------------------------------
# history
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    relevance: list[list[float]]


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if not self.records:
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            return buf.getvalue()
        C = len(self.records[0].relevance)
        B = len(self.records[0].relevance[0])
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"]
                        + [f"w_c{c}_b{b}" for c in range(C) for b in range(B)])
        for r in self.records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)]
                            + [repr(w) for row in r.relevance for w in row])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


# ---------------------------------------------------------------------------
# resumable state
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    model: Model
    best: Model
    adam: AdamState
    schedule: PlateauSchedule
    lr: float
    epoch: int  # epochs completed
    best_val: float
    beta: np.ndarray
    history: TrainHistory

    def save(self, path) -> None:
        tensors = {k: t.data for k, t in self.model.params.items()}
        tensors.update({f"best.{k}": t.data for k, t in self.best.params.items()})
        tensors.update({f"adam.m.{k}": v for k, v in self.adam.m.items()})
        tensors.update({f"adam.v.{k}": v for k, v in self.adam.v.items()})
        tensors["beta"] = self.beta
        meta = {
            "kind": "train_state",
            "adam_t": self.adam.t,
            "schedule": asdict(self.schedule),
            "lr": self.lr,
            "epoch": self.epoch,
            "best_val": self.best_val,
            "history": [asdict(r) for r in self.history.records],
        }
        write_tensors(path, self.model.config, tensors, meta)

    @classmethod
    def load(cls, path) -> "TrainState":
        config, tensors, meta = read_tensors(path)
        if meta.get("kind") != "train_state":
            raise ValueError(f"{path} is a model checkpoint, not a training state")
        model = model_from_tensors(config, tensors)
        best = model_from_tensors(config, tensors, prefix="best.")
        adam = AdamState(
            m={k[7:]: v for k, v in tensors.items() if k.startswith("adam.m.")},
            v={k[7:]: v for k, v in tensors.items() if k.startswith("adam.v.")},
            t=int(meta["adam_t"]),
        )
        history = TrainHistory([EpochRecord(**r) for r in meta["history"]])
        return cls(model, best, adam, PlateauSchedule(**meta["schedule"]), float(meta["lr"]),
                   int(meta["epoch"]), float(meta["best_val"]), tensors["beta"], history)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------


def _check_shapes(model: Model, data, name: str) -> None:
    cfg = model.config
    if len(data) == 0:
        raise ValueError(f"{name} set is empty")
    if data.images.shape[1:] != (1, *cfg.input_size):
        raise ValueError(f"{name} images have shape {data.images.shape[1:]}, model expects {(1, *cfg.input_size)}")
    if data.labels.shape[1] != cfg.num_classes:
        raise ValueError(f"{name} labels have {data.labels.shape[1]} classes, model expects {cfg.num_classes}")


def evaluate_loss(model: Model, data, beta: np.ndarray, batch_size: int = 64) -> float:
    """Mean per-sample loss without recording a tape."""
    total = 0.0
    for s in range(0, len(data), batch_size):
        out = model.forward(data.images[s:s + batch_size])
        total += float(loss(out.fused_probs, data.labels[s:s + batch_size], beta).data)
    return total / len(data)


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(model: Model, train_set, val_set, cfg: TrainConfig, resume: TrainState | None = None,
          state_path=None, on_epoch: Callable[[EpochRecord], None] | None = None
          ) -> tuple[Model, TrainHistory]:
    """Train in place and return ``(best_validation_model, history)``.

    ``train_set``/``val_set`` need ``images`` ``[n, 1, H, W]`` and ``labels``
    ``[n, C]`` arrays. Pass ``state_path`` to write a resumable state after
    every epoch, and ``resume`` to continue from one.
    """
    _check_shapes(model, train_set, "train")
    _check_shapes(model, val_set, "val")
    if resume is None:
        state = TrainState(
            model=model,
            best=model.copy(),
            adam=AdamState(),
            schedule=PlateauSchedule(cfg.plateau_patience, cfg.plateau_factor, cfg.plateau_threshold),
            lr=cfg.lr,
            epoch=0,
            best_val=float("inf"),
            beta=class_balance_factors(train_set.labels),
            history=TrainHistory(),
        )
    else:
        state = resume
        model = state.model
    n = len(train_set)
    images, labels = train_set.images, train_set.labels
    params = model.params
    while state.epoch < cfg.max_epochs and state.lr >= cfg.min_lr:
        epoch = state.epoch + 1
        perm = epoch_permutation(cfg.seed, epoch, n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            model.zero_grad()
            with Tape() as tape:
                out = model.forward(images[idx])
                batch_loss = loss(out.fused_probs, labels[idx], state.beta)
            backward(batch_loss, tape)
            tape.clear()
            adam_step({k: p.data for k, p in params.items()}, {k: p.grad for k, p in params.items()},
                      state.adam, state.lr, cfg.betas, cfg.eps)
            total += float(batch_loss.data)
        model.zero_grad()
        val = evaluate_loss(model, val_set, state.beta)
        rec = EpochRecord(epoch, total / n, val, state.lr, model.relevance_weights().tolist())
        state.history.records.append(rec)
        if val < state.best_val:
            state.best_val = val
            state.best = model.copy()
        state.lr = state.schedule.step(val, state.lr)
        state.epoch = epoch
        log.info("epoch %d train %.5f val %.5f lr %.1e", epoch, rec.train_loss, val, rec.lr)
        if on_epoch is not None:
            on_epoch(rec)
        if state_path is not None:
            state.save(state_path)
    return state.best, state.history
