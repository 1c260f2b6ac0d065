"""Joint training of the classifier and the feature discriminator.

Each iteration: build adversarial inputs against the current weights,
update the discriminator on real vs adversarial features, then update the
encoder and residual head on the mixed classification loss plus the
encoder fooling loss.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .attack import AttackConfig, fgsm
from .core_math import ConfigError, spawn_rngs
from .dataset import DatasetSplit, batches
from .losses import classification_loss, discriminator_loss, encoder_adversarial_loss
from .network import (ModelConfig, ModelParams, classifier_backward, discriminator_backward,
                      forward_classifier, forward_discriminator, init_params)

log = logging.getLogger(__name__)

MODES = {
    "simple": (1.0, 0.0),
    "at": (0.5, 0.0),
    "a2t": (1.0, 1.0),
    "a3t": (0.5, 1.0),
}

# order fixes which child stream each consumer gets
RNG_STREAMS = ["init", "disc_init", "shuffle", "dropout"]

METRIC_COLUMNS = [
    "epoch",
    "cls_acc_real_train", "cls_acc_adv_train", "cls_acc_real_val", "cls_acc_adv_val",
    "disc_acc_real_train", "disc_acc_adv_train", "disc_acc_real_val", "disc_acc_adv_val",
    "loss_cls", "loss_disc", "loss_enc_adv",
]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "a3t"
    alpha: float | None = None
    beta: float | None = None
    train_epsilon: float = 0.25
    eval_epsilon: float = 0.1
    epochs: int = 20
    batch_size: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 1
    disc_updates: int = 1
    clip: bool = True
    # None: train the discriminator unless the mode never uses adversarial inputs
    train_discriminator: bool | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {sorted(MODES)}, got {self.mode!r}")
        a, b = MODES[self.mode]
        if self.alpha is None:
            self.alpha = a
        if self.beta is None:
            self.beta = b
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.batch_size < 1 or self.epochs < 1 or self.disc_updates < 1:
            raise ConfigError("batch_size, epochs and disc_updates must all be >= 1")
        if self.train_epsilon < 0 or self.eval_epsilon < 0:
            raise ConfigError("epsilons must be >= 0")
        if self.train_discriminator is None:
            self.train_discriminator = not (self.alpha == 1.0 and self.beta == 0.0)

    @property
    def attack(self) -> AttackConfig:
        return AttackConfig(self.train_epsilon, self.clip)

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adaptive-moment optimizer with bias correction, one step counter per tensor."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def update(self, name: str, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Apply one step to ``param`` in place and return it."""
        if param.shape != grad.shape:
            raise ValueError(f"{name}: gradient shape {grad.shape} != parameter shape {param.shape}")
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
            self.t[name] = 0
        t = self.t[name] = self.t[name] + 1
        m, v = self.m[name], self.v[name]
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * (grad * grad)
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return param

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            self.update(name, params.tensors[name], g)


def _add_grads(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k] + v if k in out else v
    return out


def _finite(value: float, term: str, iteration: int) -> float:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {term} loss ({value}) at iteration {iteration}")
    return value


def train_step(params: ModelParams, opt: Adam, x: np.ndarray, y: np.ndarray, config: TrainConfig,
               dropout_rng: np.random.Generator, iteration: int = 0, on_substep=None) -> dict:
    """One joint update; mutates ``params`` and ``opt`` and returns the losses.

    ``on_substep(name)`` is called after ``"attack"``, ``"discriminator"``
    and ``"classifier"``.
    """
    alpha, beta = config.alpha, config.beta
    stats = {"loss_cls": 0.0, "loss_disc": 0.0, "loss_enc_adv": 0.0}
    trace_real = forward_classifier(params, x)
    use_adv = alpha < 1.0 or beta > 0.0 or config.train_discriminator
    trace_adv = None
    if use_adv:
        # a constant input from here on; no gradient flows through the attack
        x_adv = fgsm(params, x, y, config.attack, trace=trace_real)
        trace_adv = forward_classifier(params, x_adv)
    if on_substep:
        on_substep("attack")

    if config.train_discriminator:
        z = np.vstack([trace_real.z, trace_adv.z])
        tags = np.concatenate([np.ones(len(x)), np.zeros(len(x))])
        for _ in range(config.disc_updates):
            dtrace = forward_discriminator(params, z, True, dropout_rng)
            loss_d, g = discriminator_loss(dtrace.logits, tags)
            stats["loss_disc"] = _finite(loss_d, "discriminator", iteration)
            grads, _ = discriminator_backward(params, dtrace, g, want_params=True)
            opt.step(params, grads)
    if on_substep:
        on_substep("discriminator")

    loss_c, g_real, g_adv = classification_loss(
        trace_real.logits, trace_adv.logits if alpha < 1.0 else None, y, alpha)
    stats["loss_cls"] = _finite(loss_c, "classification", iteration)
    grads = classifier_backward(params, trace_real, g_real, {"enc", "res"})
    dz = None
    if beta > 0.0:
        dtrace = forward_discriminator(params, trace_adv.z, True, dropout_rng)
        loss_e, ge = encoder_adversarial_loss(dtrace.logits, beta)
        stats["loss_enc_adv"] = _finite(loss_e, "encoder adversarial", iteration)
        _, dz = discriminator_backward(params, dtrace, ge, want_params=False, want_features=True)
    if g_adv is not None or dz is not None:
        grads = _add_grads(grads, classifier_backward(params, trace_adv, g_adv, {"enc", "res"}, dz))
    opt.step(params, grads)
    if on_substep:
        on_substep("classifier")
    return stats


def evaluate(params: ModelParams, data: DatasetSplit, eval_epsilon: float, clip: bool = True,
             chunk: int = 1000) -> tuple[float, float, float, float]:
    """``(real_acc, adv_acc, disc_real_acc, disc_adv_acc)`` with dropout off.

    The discriminator counts a feature as real when sigmoid(logit) >= 0.5.
    """
    cfg = AttackConfig(eval_epsilon, clip)
    n = len(data)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    hits = np.zeros(4, dtype=np.int64)
    for lo in range(0, n, chunk):
        x, y = data.images[lo:lo + chunk], data.labels[lo:lo + chunk]
        tr = forward_classifier(params, x)
        ta = forward_classifier(params, fgsm(params, x, y, cfg, trace=tr))
        dr = forward_discriminator(params, tr.z).logits[:, 0]
        da = forward_discriminator(params, ta.z).logits[:, 0]
        hits += [
            (tr.logits.argmax(axis=1) == y).sum(),
            (ta.logits.argmax(axis=1) == y).sum(),
            (dr >= 0.0).sum(),
            (da < 0.0).sum(),
        ]
    return tuple(float(h) / n for h in hits)


@dataclass
class MetricsHistory:
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict) -> None:
        self.rows.append({k: row[k] for k in METRIC_COLUMNS})

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[k])) for k in METRIC_COLUMNS[1:]])

    @classmethod
    def from_csv(cls, path) -> "MetricsHistory":
        with open(path, newline="", encoding="utf-8") as f:
            rows = [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()}
                    for r in csv.DictReader(f)]
        return cls(rows)


def train(config: TrainConfig, model_config: ModelConfig, train_data: DatasetSplit,
          val_data: DatasetSplit | None = None, on_epoch=None):
    """Run ``config.epochs`` epochs; returns ``(params, MetricsHistory)``.

    Validation columns are filled from ``val_data`` (the training split is
    reused when it is None). ``on_epoch(row)`` is called after each epoch.
    """
    train_data.check(model_config.num_classes, model_config.input_dim)
    if val_data is None:
        val_data = train_data
    val_data.check(model_config.num_classes, model_config.input_dim)
    rngs = spawn_rngs(config.seed, RNG_STREAMS)
    params = init_params(model_config, rngs["init"], rngs["disc_init"])
    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    history = MetricsHistory()
    it = 0
    for epoch in range(1, config.epochs + 1):
        sums = {"loss_cls": 0.0, "loss_disc": 0.0, "loss_enc_adv": 0.0}
        steps = 0
        for x, y in batches(train_data, config.batch_size, rngs["shuffle"]):
            s = train_step(params, opt, x, y, config, rngs["dropout"], iteration=it)
            for k in sums:
                sums[k] += s[k]
            steps += 1
            it += 1
        tr = evaluate(params, train_data, config.train_epsilon, config.clip)
        va = evaluate(params, val_data, config.train_epsilon, config.clip)
        row = {
            "epoch": epoch,
            "cls_acc_real_train": tr[0], "cls_acc_adv_train": tr[1],
            "cls_acc_real_val": va[0], "cls_acc_adv_val": va[1],
            "disc_acc_real_train": tr[2], "disc_acc_adv_train": tr[3],
            "disc_acc_real_val": va[2], "disc_acc_adv_val": va[3],
            **{k: v / steps for k, v in sums.items()},
        }
        history.append(row)
        log.info("epoch %d: real %.4f adv %.4f (val) disc %.3f/%.3f loss %.4f",
                 epoch, va[0], va[1], va[2], va[3], row["loss_cls"])
        if on_epoch:
            on_epoch(row)
    return params, history
