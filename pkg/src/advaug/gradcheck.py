"""Finite-difference verification of every analytic gradient in the model.

Each trial builds a small random network and checks the three training
losses against central differences, for every parameter tensor the loss
reaches and for the input.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import network
from .core_math import make_rng
from .losses import classification_loss, discriminator_loss, encoder_adversarial_loss
from .network import ModelConfig, backward, forward_classifier, forward_discriminator

TOLERANCE = 1e-5
STEP = 1e-5


@dataclass
class CheckResult:
    trial: int
    loss: str
    tensor: str
    error: float


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradient(f, arr: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``arr``, perturbed in place."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def random_problem(rng: np.random.Generator):
    """Small random config, params with nonzero biases, a batch and labels."""
    n_hidden = int(rng.integers(1, 4))
    cfg = ModelConfig(
        input_dim=int(rng.integers(3, 7)),
        hidden_widths=tuple(int(w) for w in rng.integers(2, 6, size=n_hidden)),
        num_classes=int(rng.integers(2, 5)),
        split_index=int(rng.integers(1, n_hidden + 1)),
        leaky_slope=float(rng.uniform(0.01, 0.3)),
        disc_hidden=int(rng.integers(2, 6)),
        disc_dropout_rate=0.5,
    )
    params = network.init_params(cfg, rng)
    for name in params.names():
        if ".b" in name:
            params.tensors[name] = rng.uniform(-0.5, 0.5, size=params[name].shape)
    batch = int(rng.integers(2, 5))
    x = rng.uniform(0.0, 1.0, size=(batch, cfg.input_dim))
    x_adv = rng.uniform(0.0, 1.0, size=(batch, cfg.input_dim))
    y = rng.integers(0, cfg.num_classes, size=batch)
    return params, x, x_adv, y


@contextlib.contextmanager
def _corrupted_leaky_derivative():
    original = network._leaky_grad
    network._leaky_grad = lambda pre, slope: np.where(pre >= 0, 1.0, 1.5 * slope)
    try:
        yield
    finally:
        network._leaky_grad = original


def _check_trial(trial: int, rng: np.random.Generator, corrupt: bool) -> list[CheckResult]:
    params, x, x_adv, y = random_problem(rng)
    cfg = params.config
    alpha = float(rng.uniform(0.0, 1.0))
    beta = float(rng.uniform(0.5, 2.0))
    tags = rng.integers(0, 2, size=x.shape[0]).astype(np.float64)
    scale = network.dropout_scale(rng, x.shape[0], cfg.disc_hidden, cfg.disc_dropout_rate)
    scale_adv = network.dropout_scale(rng, x.shape[0], cfg.disc_hidden, cfg.disc_dropout_rate)

    def cls_loss():
        lr = forward_classifier(params, x).logits
        la = forward_classifier(params, x_adv).logits
        return classification_loss(lr, la, y, alpha)[0]

    def disc_loss():
        z = forward_classifier(params, x).z
        return discriminator_loss(forward_discriminator(params, z, scale=scale).logits, tags)[0]

    def enc_loss():
        z = forward_classifier(params, x).z
        d = forward_discriminator(params, z, scale=scale_adv).logits
        return encoder_adversarial_loss(d, beta)[0]

    ctx = _corrupted_leaky_derivative() if corrupt else contextlib.nullcontext()
    with ctx:
        tr = forward_classifier(params, x)
        ta = forward_classifier(params, x_adv)
        _, g_r, g_a = classification_loss(tr.logits, ta.logits, y, alpha)
        cls = backward(params, tr, {"logits": g_r}, {"enc", "res", "input"})
        cls_adv = backward(params, ta, {"logits": g_a}, {"enc", "res"})
        for n, g in cls_adv.items():
            cls[n] = cls[n] + g

        tr.disc = forward_discriminator(params, tr.z, scale=scale)
        _, g_d = discriminator_loss(tr.disc.logits, tags)
        disc = backward(params, tr, {"disc_logits": g_d}, {"enc", "disc", "input"})

        tr.disc = forward_discriminator(params, tr.z, scale=scale_adv)
        _, g_e = encoder_adversarial_loss(tr.disc.logits, beta)
        enc = backward(params, tr, {"disc_logits": g_e}, {"enc", "disc", "input"})

    results = []
    for loss_name, f, grads in (("classification", cls_loss, cls),
                                ("discriminator", disc_loss, disc),
                                ("encoder_adversarial", enc_loss, enc)):
        for name, g in grads.items():
            arr = x if name == "input" else params.tensors[name]
            num = numeric_gradient(f, arr)
            results.append(CheckResult(trial, loss_name, name, relative_error(g, num)))
    return results


def run_gradcheck(seed: int = 0, trials: int = 50, corrupt: bool = False) -> list[CheckResult]:
    """All check results over ``trials`` random problems drawn from ``seed``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = make_rng(seed)
    results = []
    for t in range(trials):
        results.extend(_check_trial(t, rng, corrupt))
    return results


def worst(results: list[CheckResult]) -> CheckResult:
    return max(results, key=lambda r: r.error)
