"""Training losses, all computed from logits.

Every function returns the batch-mean loss together with its gradient with
respect to the logits it was given.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import ConfigError, ShapeError, sigmoid


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")


def _labels(y, n_rows: int, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_rows,):
        raise ShapeError(f"expected {n_rows} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise DataError(f"labels must lie in [0, {n_classes}), got range "
                        f"[{y.min()}, {y.max()}]")
    return y.astype(np.intp)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, y, reduction: str = "mean"):
    """Softmax cross-entropy and its gradient with respect to ``logits``.

    ``reduction="sum"`` gives every row the gradient of its own loss, which
    is what the input-gradient attack wants.
    """
    n, c = logits.shape
    y = _labels(y, n, c)
    logp = log_softmax(logits)
    rows = np.arange(n)
    per_row = -logp[rows, y]
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    if reduction == "sum":
        return float(per_row.sum()), grad
    if reduction != "mean":
        raise ConfigError(f"unknown reduction {reduction!r}")
    if n == 0:
        raise ShapeError("empty batch")
    return float(per_row.mean()), grad / n


def classification_loss(logits_real, logits_adv, y, alpha: float):
    """Convex mix of clean and adversarial cross-entropy.

    Returns ``(loss, grad_real, grad_adv)``. With ``alpha == 1`` the
    adversarial logits may be ``None``, in which case ``grad_adv`` is
    ``None`` too.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    loss_real, g_real = cross_entropy(logits_real, y)
    if logits_adv is None:
        if alpha != 1.0:
            raise ShapeError("adversarial logits are required when alpha < 1")
        return loss_real, g_real, None
    if logits_adv.shape != logits_real.shape:
        raise ShapeError(f"logit shapes differ: {logits_real.shape} vs {logits_adv.shape}")
    loss_adv, g_adv = cross_entropy(logits_adv, y)
    loss = alpha * loss_real + (1.0 - alpha) * loss_adv
    return loss, alpha * g_real, (1.0 - alpha) * g_adv


def _softplus_neg_abs(t: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(t)))


def discriminator_loss(d_logits, tags):
    """Mean binary cross-entropy of the real/adversarial tags (1 = real)."""
    d_logits = np.asarray(d_logits, dtype=np.float64)
    flat = d_logits.reshape(-1)
    t = np.asarray(tags, dtype=np.float64).reshape(-1)
    if t.shape != flat.shape:
        raise ShapeError(f"{flat.size} discriminator logits but {t.size} tags")
    if flat.size == 0:
        raise ShapeError("empty batch")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise DataError("discriminator tags must be 0 or 1")
    per_row = np.maximum(flat, 0.0) - flat * t + _softplus_neg_abs(flat)
    grad = (sigmoid(flat) - t) / flat.size
    return float(per_row.mean()), grad.reshape(d_logits.shape)


def encoder_adversarial_loss(d_logits_adv, beta: float):
    """``beta`` times the mean of ``-log D`` on adversarial features.

    Pushes the encoder to make adversarial features look real.
    """
    if beta < 0.0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    loss, grad = discriminator_loss(d_logits_adv, np.ones(np.size(d_logits_adv)))
    return beta * loss, beta * grad
