"""Attack outcomes and their on-disk formats."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..container import read_container, write_container
from ..dataset import label_to_string
from ..errors import FormatError

ATTACK_KINDS = ("fgsm", "onepixel")
DISPLAY_NAMES = {"fgsm": "FGSM", "onepixel": "OnePixel"}

OUTCOME_MAGIC = b"CAPATKS\x00"
OUTCOME_VERSION = 1


def slot_success(true_label, pred_before, pred_after) -> bool:
    """True when some character slot went from correct to incorrect."""
    true_label = np.asarray(true_label)
    flipped = (np.asarray(pred_before) == true_label) & (np.asarray(pred_after) != true_label)
    return bool(flipped.any())


@dataclass
class AttackOutcome:
    original: np.ndarray
    adversarial: np.ndarray
    true_label: np.ndarray
    pred_before: np.ndarray
    pred_after: np.ndarray
    success: bool
    kind: str
    epsilon: float | None = None
    candidate: object | None = None  # PixelCandidate for one-pixel outcomes
    fitness_history: list[float] = field(default_factory=list)


def save_outcomes(outcomes: list[AttackOutcome], path) -> None:
    meta = {
        "kinds": [o.kind for o in outcomes],
        "epsilons": [o.epsilon for o in outcomes],
        "candidates": [o.candidate.to_json() if o.candidate is not None else None
                       for o in outcomes],
        "fitness_history": [o.fitness_history for o in outcomes],
    }
    arrays = {}
    if outcomes:
        arrays = {
            "original": np.stack([o.original for o in outcomes]),
            "adversarial": np.stack([o.adversarial for o in outcomes]),
            "true_label": np.stack([o.true_label for o in outcomes]).astype(np.int64),
            "pred_before": np.stack([o.pred_before for o in outcomes]).astype(np.int64),
            "pred_after": np.stack([o.pred_after for o in outcomes]).astype(np.int64),
            "success": np.array([o.success for o in outcomes], dtype=np.uint8),
        }
    write_container(path, OUTCOME_MAGIC, OUTCOME_VERSION, meta, arrays)


def load_outcomes(path) -> list[AttackOutcome]:
    from .one_pixel import PixelCandidate

    _, meta, arrays = read_container(path, OUTCOME_MAGIC, OUTCOME_VERSION)
    try:
        n = len(meta["kinds"])
        if n == 0:
            return []
        return [AttackOutcome(
            original=arrays["original"][i], adversarial=arrays["adversarial"][i],
            true_label=arrays["true_label"][i], pred_before=arrays["pred_before"][i],
            pred_after=arrays["pred_after"][i], success=bool(arrays["success"][i]),
            kind=meta["kinds"][i], epsilon=meta["epsilons"][i],
            candidate=(PixelCandidate.from_json(meta["candidates"][i])
                       if meta["candidates"][i] is not None else None),
            fitness_history=list(meta["fitness_history"][i]),
        ) for i in range(n)]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: inconsistent attack payload: {exc}") from exc


def write_outcome_csv(outcomes: list[AttackOutcome], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "kind", "success", "pred_before", "pred_after"])
        for i, o in enumerate(outcomes):
            writer.writerow([i, o.kind, int(o.success), label_to_string(o.pred_before),
                             label_to_string(o.pred_after)])
