"""Attacking every sample of a dataset."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import ConfigError
from ..netcore import AccuracyReport, Model, accuracy_from_predictions, predict_proba
from .fgsm import FgsmParams, fgsm
from .one_pixel import OnePixelParams, PredictFn, one_pixel_attack
from .outcome import ATTACK_KINDS, AttackOutcome, slot_success


def model_oracle(model: Model, batch_size: int = 64) -> PredictFn:
    """Probability-only view of a model, as used by black-box attacks."""
    def predict(images: np.ndarray) -> np.ndarray:
        return predict_proba(model, images, batch_size=batch_size)
    return predict


def sample_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1, np.uint64)[0])


def attack_dataset(model: Model, data, kind: str, params,
                   workers: int = 1) -> tuple[list[AttackOutcome], AccuracyReport]:
    """Attack each sample of ``data`` independently.

    One-pixel runs use a seed derived from ``(params.seed, sample index)``,
    so outcomes do not depend on ordering or on ``workers``.  ``workers``
    only applies to one-pixel campaigns, whose model queries are read-only;
    FGSM needs backward caches and always runs serially.  The returned
    report is the accuracy of the model on the adversarial images.
    """
    images, labels = data.images, data.labels
    if len(labels) == 0:
        raise ConfigError("cannot attack an empty dataset")
    if kind not in ATTACK_KINDS:
        raise ConfigError(f"unknown attack kind {kind!r}; expected one of {ATTACK_KINDS}")

    if kind == "fgsm":
        if not isinstance(params, FgsmParams):
            raise ConfigError("fgsm attack needs FgsmParams")

        def run(i: int) -> AttackOutcome:
            x, y = images[i], labels[i]
            adv = fgsm(model, x, y, params)
            before = predict_proba(model, x[None]).argmax(-1)[0]
            after = predict_proba(model, adv[None]).argmax(-1)[0]
            return AttackOutcome(x, adv, y, before, after, slot_success(y, before, after),
                                 "fgsm", epsilon=float(params.epsilon))
    else:
        if not isinstance(params, OnePixelParams):
            raise ConfigError("one-pixel attack needs OnePixelParams")
        predict = model_oracle(model)

        def run(i: int) -> AttackOutcome:
            return one_pixel_attack(predict, images[i], labels[i], params,
                                    seed=sample_seed(params.seed, i))

    if workers > 1 and kind == "onepixel":
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, range(len(labels))))
    else:
        outcomes = [run(i) for i in range(len(labels))]
    report = accuracy_from_predictions(np.stack([o.pred_after for o in outcomes]), labels)
    return outcomes, report
