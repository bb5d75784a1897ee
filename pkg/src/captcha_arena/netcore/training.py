"""Mini-batch training, evaluation and prediction loops."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ConfigError
from .model import Model, forward, forward_backward
from .optim import Adam, TrainConfig


@dataclass(frozen=True)
class AccuracyReport:
    per_char_acc: float
    full_match_acc: float
    n_samples: int

    def to_dict(self) -> dict:
        return {"per_char_acc": self.per_char_acc, "full_match_acc": self.full_match_acc,
                "n_samples": self.n_samples}


def train(model: Model, data, cfg: TrainConfig,
          on_epoch: Callable[[int, float], None] | None = None) -> tuple[Model, list[float]]:
    """Train ``model`` in place on ``data`` (anything with ``images`` and ``labels``).

    Batch order is drawn from ``cfg.seed``; returns the model and the mean
    training loss of each epoch.
    """
    images, labels = data.images, data.labels
    n = len(labels)
    if n == 0:
        raise ConfigError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg)
    model.training = True
    curve = []
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                loss, grads, _ = forward_backward(model, images[idx], labels[idx])
                opt.step(grads)
                total += loss * len(idx)
            curve.append(total / n)
            if on_epoch is not None:
                on_epoch(epoch + 1, curve[-1])
    finally:
        model.training = False
    return model, curve


def predict_proba(model: Model, images: np.ndarray, batch_size: int = 1) -> np.ndarray:
    """Eval-mode head probabilities for a stack of images, ``(N, heads, classes)``.

    BLAS results depend slightly on the batch composition, so the canonical
    prediction of an image is computed with ``batch_size=1``; this keeps
    evaluation and attack replays bit-reproducible regardless of how images
    are grouped.  Larger batches are allowed where exactness is not needed.
    """
    was_training = model.training
    model.training = False
    try:
        chunks = [forward(model, images[i:i + batch_size], record=False)
                  for i in range(0, len(images), batch_size)]
    finally:
        model.training = was_training
    return np.concatenate(chunks) if chunks else np.zeros((0, model.config.n_heads,
                                                           model.config.num_classes))


def predict_labels(model: Model, images: np.ndarray, batch_size: int = 1) -> np.ndarray:
    return predict_proba(model, images, batch_size).argmax(axis=-1)


def accuracy_from_predictions(pred: np.ndarray, labels: np.ndarray) -> AccuracyReport:
    correct = pred == labels
    return AccuracyReport(per_char_acc=float(correct.mean()),
                          full_match_acc=float(correct.all(axis=1).mean()),
                          n_samples=int(len(labels)))


def evaluate(model: Model, data, batch_size: int = 1) -> AccuracyReport:
    if len(data.labels) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    return accuracy_from_predictions(predict_labels(model, data.images, batch_size), data.labels)


def write_loss_curve(curve, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(curve, start=1):
            writer.writerow([epoch, repr(float(loss))])
