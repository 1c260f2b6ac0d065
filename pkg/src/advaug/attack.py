"""Fast gradient sign attack and clean/adversarial accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import ConfigError, sign
from .network import ModelParams, UsageError, forward_classifier, input_gradient


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.1
    clip_to_unit_box: bool = True

    def __post_init__(self):
        if not self.epsilon >= 0.0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")


def fgsm(params: ModelParams, x: np.ndarray, y, cfg: AttackConfig, trace=None) -> np.ndarray:
    """One signed-gradient step of size ``cfg.epsilon`` away from the true label.

    Returns a new array; ``x`` and ``params`` are left untouched. Coordinates
    with an exactly zero gradient are not moved. ``trace`` may be a forward
    trace of ``x`` under ``params`` to skip recomputing it.
    """
    if cfg.epsilon == 0.0:
        return x.copy()
    g = input_gradient(params, x, y, trace=trace)
    x_adv = x + cfg.epsilon * sign(g)
    # x + eps can round so that (x + eps) - x > eps; pull those back an ulp
    over = np.abs(x_adv - x) > cfg.epsilon
    while over.any():
        x_adv[over] = np.nextafter(x_adv[over], x[over])
        over = np.abs(x_adv - x) > cfg.epsilon
    if cfg.clip_to_unit_box:
        np.clip(x_adv, 0.0, 1.0, out=x_adv)
    return x_adv


def attack_success_stats(params: ModelParams, x: np.ndarray, y, cfg: AttackConfig,
                         chunk: int = 1000) -> tuple[float, float]:
    """White-box ``(clean_accuracy, adversarial_accuracy)`` on ``(x, y)``."""
    y = np.asarray(y)
    n = x.shape[0]
    if n == 0:
        raise UsageError("cannot score an empty batch")
    clean = adv = 0
    for lo in range(0, n, chunk):
        xb, yb = x[lo:lo + chunk], y[lo:lo + chunk]
        trace = forward_classifier(params, xb)
        clean += int((trace.logits.argmax(axis=1) == yb).sum())
        x_adv = fgsm(params, xb, yb, cfg, trace=trace)
        adv += int((forward_classifier(params, x_adv).logits.argmax(axis=1) == yb).sum())
    return clean / n, adv / n
