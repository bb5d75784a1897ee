"""Fast gradient sign method."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from ..netcore import Model, forward_backward


@dataclass(frozen=True)
class FgsmParams:
    epsilon: float = 0.1

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")


def input_gradient(model: Model, images: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. the input batch, in eval mode."""
    was_training = model.training
    model.training = False
    try:
        _, _, dx = forward_backward(model, images, labels)
    finally:
        model.training = was_training
    return dx


def fgsm(model: Model, x: np.ndarray, y, params: FgsmParams) -> np.ndarray:
    """One-step attack ``clip(x + eps * sign(grad_x J), 0, 1)``.

    ``x`` is a single ``(C, H, W)`` image; ``y`` its label.  The gradient
    is taken with the image alone in the batch so the result does not depend
    on what else is being attacked.
    """
    x = np.asarray(x)
    if x.shape != model.config.input_shape:
        raise ShapeError(f"expected image of shape {model.config.input_shape}, got {x.shape}")
    if params.epsilon == 0:
        return x.copy()
    grad = input_gradient(model, x[None], np.asarray(y)[None])[0]
    exact = np.clip(x.astype(np.float64) + params.epsilon * np.sign(grad), 0.0, 1.0)
    adv = exact.astype(x.dtype)
    if adv.dtype != np.float64:
        # rounding to a narrower dtype can land just outside the eps-box; step back toward x
        # (differences of float32 values are exact in float64, so the test is exact)
        over = np.abs(adv.astype(np.float64) - x) > params.epsilon
        while over.any():
            adv[over] = np.nextafter(adv[over], x[over])
            over = np.abs(adv.astype(np.float64) - x) > params.epsilon
    return adv
