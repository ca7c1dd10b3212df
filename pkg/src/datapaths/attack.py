"""Adversarial example generation: FGSM and its momentum-iterative variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import ModelSpec
from .network import input_gradients


@dataclass(frozen=True)
class AttackParams:
    epsilon: float  # L-inf budget in pixel units
    alpha: float  # per-step size
    mu: float  # momentum decay
    steps: int  # iteration count
    pixel_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValidationError("epsilon must be >= 0", "epsilon")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1", "steps")
        if self.alpha <= 0:
            raise ValidationError("alpha must be > 0", "alpha")
        low, high = self.pixel_bounds
        if not low < high:
            raise ValidationError("pixel bounds must satisfy low < high", "pixel_bounds")


def fgsm(model: ModelSpec, x, true_label: int, epsilon: float, bounds=(0.0, 1.0)) -> np.ndarray:
    """Single-step sign attack: x + eps * sign(dCE/dx), clipped to bounds."""
    x = np.asarray(x, dtype=np.float64)
    grad = input_gradients(model, x, None, true_label)
    adv = x + epsilon * np.sign(grad)
    return np.clip(adv, bounds[0], bounds[1])


def mi_fgsm(model: ModelSpec, x, true_label: int, params: AttackParams) -> np.ndarray:
    """Momentum-iterative sign attack.

    Each step folds the L1-normalized gradient into a momentum buffer
    (g <- mu*g + grad/||grad||_1), steps by alpha*sign(g), and projects the
    iterate back into the epsilon ball intersected with the pixel bounds. A
    zero-gradient step skips the normalization and just decays the momentum.
    """
    x = np.asarray(x, dtype=np.float64)
    low, high = params.pixel_bounds
    lo = np.maximum(x - params.epsilon, low)
    hi = np.minimum(x + params.epsilon, high)
    adv = x.copy()
    g = np.zeros_like(x)
    for _ in range(params.steps):
        grad = input_gradients(model, adv, None, true_label)
        l1 = float(np.abs(grad).sum())
        if l1 > 0.0:
            g = params.mu * g + grad / l1
        else:
            g = params.mu * g
        adv = np.clip(adv + params.alpha * np.sign(g), lo, hi)
    return adv
