"""Minibatch training loop and top-1 evaluation shared by every entry point."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, TrainingError
from .optim import AdamW, cosine_lr
from .tensor import Rng

PRECISIONS = ("float32", "float64")


@dataclass(frozen=True)
class TrainConfig:
    """AdamW + warmup/cosine recipe. Defaults are the documented toy-scale ones."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    warmup_frac: float = 0.1
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not 0 <= self.warmup_frac < 1:
            raise ConfigError("warmup_frac must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def train_loop(forward: Callable, params: list, images: np.ndarray, labels: np.ndarray,
               cfg: TrainConfig, stream: int = 0) -> list[float]:
    """Optimise ``params`` on softmax cross-entropy; returns the per-step losses.

    Batches are reshuffled every epoch from ``Rng(cfg.seed).spawn(stream)``.
    A non-finite loss aborts with TrainingError carrying the step index.
    """
    n = len(labels)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    bs = min(cfg.batch_size, n)
    per_epoch = math.ceil(n / bs)
    total = cfg.epochs * per_epoch
    warmup = int(round(cfg.warmup_frac * total))
    opt = AdamW(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    rng = Rng(cfg.seed).spawn(stream)
    images = np.asarray(images, dtype=cfg.precision)
    history = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(per_epoch):
            idx = order[s * bs:(s + 1) * bs]
            with T.graph(cfg.precision):
                loss = T.softmax_cross_entropy(forward(images[idx]), labels[idx])
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError("loss became non-finite", step=step)
                opt.zero_grad()
                T.backward(loss)
            opt.step(cosine_lr(step, total, cfg.lr, warmup))
            history.append(value)
            step += 1
    opt.zero_grad()
    return history


def predict_logits(forward: Callable, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    images = np.asarray(images, dtype=np.float32)
    out = []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            out.append(forward(images[start:start + batch_size]).data)
    return np.concatenate(out, axis=0)


def evaluate_top1(model, dataset) -> float:
    """Percent of examples whose argmax logit is the label (ties go to the lowest index)."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    logits = predict_logits(model, dataset.images)
    pred = np.argmax(logits, axis=1)
    return 100.0 * float(np.mean(pred == dataset.labels))
