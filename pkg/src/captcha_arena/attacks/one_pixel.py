"""Black-box few-pixel attack searched with differential evolution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import BoundsError, ConfigError
from .de import differential_evolution
from .outcome import AttackOutcome, slot_success

# Maps a stack of images (N, C, H, W) to head probabilities (N, heads, classes).
PredictFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OnePixelParams:
    d: int = 1
    pop_size: int = 40
    generations: int = 30
    scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.pop_size < 4:
            raise ConfigError("pop_size must be >= 4")
        if self.generations < 1:
            raise ConfigError("generations must be >= 1")
        if not self.scale > 0:
            raise ConfigError("scale F must be positive")


@dataclass(frozen=True)
class PixelCandidate:
    """``d`` pixel overwrites, each ``(row, col, (value per channel...))``."""

    pixels: tuple[tuple[int, int, tuple[float, ...]], ...]

    @classmethod
    def from_vector(cls, vec: np.ndarray, image_shape) -> PixelCandidate:
        """Decode a DE vector; coordinates are rounded and clamped, values clamped."""
        c, h, w = image_shape
        per = 2 + c
        vec = np.asarray(vec, dtype=np.float64).reshape(-1, per)
        rows = np.clip(np.floor(vec[:, 0] + 0.5), 0, h - 1).astype(int)
        cols = np.clip(np.floor(vec[:, 1] + 0.5), 0, w - 1).astype(int)
        vals = np.clip(vec[:, 2:], 0.0, 1.0)
        return cls(tuple((int(r), int(q), tuple(float(v) for v in vs))
                         for r, q, vs in zip(rows, cols, vals)))

    def to_vector(self) -> np.ndarray:
        return np.array([[r, q, *vs] for r, q, vs in self.pixels], dtype=np.float64).ravel()

    def to_json(self) -> list:
        return [[r, q, list(vs)] for r, q, vs in self.pixels]

    @classmethod
    def from_json(cls, data) -> PixelCandidate:
        return cls(tuple((int(r), int(q), tuple(float(v) for v in vs)) for r, q, vs in data))


def candidate_bounds(image_shape, d: int) -> np.ndarray:
    c, h, w = image_shape
    per_pixel = [(0.0, h - 1.0), (0.0, w - 1.0)] + [(0.0, 1.0)] * c
    return np.array(per_pixel * d, dtype=np.float64)


def apply_candidate(x: np.ndarray, cand: PixelCandidate) -> np.ndarray:
    """Copy of ``x`` with exactly the listed pixels overwritten."""
    c, h, w = x.shape
    out = x.copy()
    for r, q, vals in cand.pixels:
        if not (0 <= r < h and 0 <= q < w):
            raise BoundsError(f"pixel ({r}, {q}) outside a {h}x{w} image")
        if len(vals) != c:
            raise BoundsError(f"pixel value has {len(vals)} channels, image has {c}")
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise BoundsError(f"pixel values {vals} outside [0, 1]")
        out[:, r, q] = vals
    return out


def apply_vectors(x: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Vectorised ``apply_candidate`` for a population of encoded candidates."""
    c, h, w = x.shape
    p = len(vectors)
    enc = vectors.reshape(p, -1, 2 + c)
    rows = np.clip(np.floor(enc[:, :, 0] + 0.5), 0, h - 1).astype(np.intp)
    cols = np.clip(np.floor(enc[:, :, 1] + 0.5), 0, w - 1).astype(np.intp)
    vals = np.clip(enc[:, :, 2:], 0.0, 1.0)
    out = np.repeat(x[None], p, axis=0)
    for k in range(enc.shape[1]):
        out[np.arange(p), :, rows[:, k], cols[:, k]] = vals[:, k]
    return out


def true_class_mass(probs: np.ndarray, y) -> np.ndarray:
    """Probability of the true character summed over the heads, per image."""
    y = np.asarray(y)
    return probs[:, np.arange(len(y)), y].sum(axis=1)


def one_pixel_attack(predict: PredictFn, x: np.ndarray, y, params: OnePixelParams,
                     seed: int | None = None) -> AttackOutcome:
    """Minimise the true-class probability mass by overwriting at most ``d`` pixels.

    Only ``predict`` outputs are used, never gradients or weights.
    Predictions recorded in the outcome come from single-image queries so a
    replay of the stored candidate reproduces them exactly.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)

    def objective(pop: np.ndarray) -> np.ndarray:
        return true_class_mass(predict(apply_vectors(x, pop)), y)

    state, history = differential_evolution(
        objective, candidate_bounds(x.shape, params.d), params.pop_size, params.generations,
        params.scale, params.seed if seed is None else seed)
    best_vec, _ = state.best
    cand = PixelCandidate.from_vector(best_vec, x.shape)
    adv = apply_candidate(x, cand)
    before = predict(x[None]).argmax(axis=-1)[0]
    after = predict(adv[None]).argmax(axis=-1)[0]
    return AttackOutcome(original=x, adversarial=adv, true_label=y, pred_before=before,
                         pred_after=after, success=slot_success(y, before, after),
                         kind="onepixel", candidate=cand, fitness_history=history)
