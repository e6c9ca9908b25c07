"""Masked momentum-SGD and the training loop.

Fixed parameters still take part in the forward and backward passes, so
gradients flow through them to earlier layers; only their updates are
suppressed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset, augment, batch_iter
from .nn import Model
from .partition import MaskSet
from .tensor import Rng


class NumericError(FloatingPointError):
    pass


def default_schedule(epochs: int) -> list[tuple[int, float]]:
    """x0.1 after ceil(E/3) epochs and x0.01 after ceil(2E/3); 45 epochs gives steps at 15 and 30."""
    steps = []
    for frac, mult in ((1, 0.1), (2, 0.01)):
        e = -(-frac * epochs // 3)
        if e < epochs and (not steps or e > steps[-1][0]):
            steps.append((e, mult))
    return steps


@dataclass
class OptimConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: list | None = None
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = default_schedule(self.epochs)
        self.schedule = [(int(e), float(m)) for e, m in self.schedule]
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        epochs = [e for e, _ in self.schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("schedule epochs must be strictly increasing")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch: the base rate times the last multiplier reached."""
        mult = 1.0
        for e, m in self.schedule:
            if epoch >= e:
                mult = m
        return self.lr * mult


@dataclass
class OptimState:
    velocity: dict = field(default_factory=dict)
    steps: int = 0


def sgd_step(params: dict, grads: dict, masks: MaskSet, state: OptimState, cfg: OptimConfig, lr=None):
    """One momentum-SGD update of the learned entries.

    g = grad + wd * w;  v = momentum * v + g;  w = w - lr * v,
    with v (and therefore the step) held at zero on fixed entries.
    """
    lr = cfg.lr if lr is None else lr
    for name, p in params.items():
        mask = masks[name]
        if not mask.any():
            continue
        g = grads.get(name)
        if g is None:
            continue
        if not np.isfinite(g[mask]).all():
            raise NumericError(f"non-finite gradient for {name}")
        w = p.data
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(w)
        d = g + cfg.weight_decay * w if cfg.weight_decay else g
        v *= cfg.momentum
        v += d
        v[~mask] = 0
        w -= w.dtype.type(lr) * v
    state.steps += 1


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float
    count: int


def train_step(model: Model, images, labels, masks, state, cfg, lr):
    logits = model.forward(images, "train")
    loss = T.softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss.data):
        raise NumericError("non-finite training loss")
    grads = T.backward(loss)
    sgd_step(model.params, grads, masks, state, cfg, lr)
    correct = int((logits.data.argmax(axis=1) == labels).sum())
    return float(loss.data), correct


def train_epoch(model: Model, dataset: Dataset, masks: MaskSet, state: OptimState, cfg: OptimConfig,
                rng: Rng, epoch=0, use_augment=False) -> EpochMetrics:
    """One shuffled pass over ``dataset``; loss and accuracy are running means over the pass."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    lr = cfg.lr_at(epoch)
    total_loss, correct = 0.0, 0
    for images, labels, _ in batch_iter(dataset, cfg.batch_size, True, rng):
        if use_augment:
            images = augment(images, rng)
        loss, c = train_step(model, images, labels, masks, state, cfg, lr)
        total_loss += loss * len(labels)
        correct += c
    n = len(dataset)
    return EpochMetrics(total_loss / n, correct / n, n)


def predict_logits(model: Model, dataset: Dataset, batch_size=256) -> np.ndarray:
    out = [model.forward(x, "eval").data for x, _, _ in batch_iter(dataset, batch_size, False)]
    return np.concatenate(out)


def eval_metrics(model: Model, dataset: Dataset, batch_size=256) -> EpochMetrics:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    logits = predict_logits(model, dataset, batch_size)
    logp = T.log_softmax(logits.astype(np.float64))
    loss = float(-logp[np.arange(len(dataset)), dataset.labels].mean())
    acc = float((logits.argmax(axis=1) == dataset.labels).mean())
    return EpochMetrics(loss, acc, len(dataset))


def evaluate(model: Model, dataset: Dataset, batch_size=256) -> float:
    """Top-1 accuracy in eval mode."""
    return eval_metrics(model, dataset, batch_size).accuracy


def train(model: Model, train_set: Dataset, masks: MaskSet, cfg: OptimConfig, val_set: Dataset | None = None,
          use_augment=False, on_epoch=None, rng: Rng | None = None) -> list[dict]:
    """Run ``cfg.epochs`` epochs; returns one metrics dict per epoch."""
    rng = Rng(cfg.seed).spawn(1) if rng is None else rng
    state = OptimState()
    history = []
    for epoch in range(cfg.epochs):
        m = train_epoch(model, train_set, masks, state, cfg, rng, epoch, use_augment)
        row = {"epoch": epoch + 1, "lr": cfg.lr_at(epoch), "train_loss": m.loss, "train_acc": m.accuracy,
               "val_loss": math.nan, "val_acc": math.nan}
        if val_set is not None:
            v = eval_metrics(model, val_set)
            row["val_loss"], row["val_acc"] = v.loss, v.accuracy
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return history
