"""Feed-forward classifier split into encoder and residual head, plus a
discriminator that reads the encoder output.

Layout for the default configuration (``x @ W + b`` everywhere)::

    x (784) -> enc.W0 (784x512) -> enc.W1 (512x256) = z
      z -> res.W2 (256x128) -> res.W3 (128x10) = class logits
      z -> disc.W0 (256x128), ReLU, dropout -> disc.W1 (128x1) = disc logit

Hidden classifier layers use leaky ReLU; the class head is linear.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import core_math
from .core_math import ConfigError, ShapeError, matmul
from .losses import cross_entropy

GROUPS = ("enc", "res", "disc")
TARGETS = frozenset(GROUPS + ("input",))


class UsageError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 784
    hidden_widths: tuple[int, ...] = (512, 256, 128)
    num_classes: int = 10
    split_index: int = 2
    leaky_slope: float = 0.01
    disc_hidden: int = 128
    disc_dropout_rate: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        widths = (self.input_dim, *self.hidden_widths, self.num_classes, self.disc_hidden)
        if any(w < 1 for w in widths):
            raise ConfigError(f"all widths must be >= 1, got {widths}")
        if not 1 <= self.split_index <= len(self.hidden_widths):
            raise ConfigError(
                f"split_index must lie in [1, {len(self.hidden_widths)}], got {self.split_index}")
        if not 0.0 <= self.disc_dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.disc_dropout_rate}")

    @property
    def feature_dim(self) -> int:
        return self.hidden_widths[self.split_index - 1]

    @property
    def num_layers(self) -> int:
        """Affine layers in the classifier, class head included."""
        return len(self.hidden_widths) + 1

    def layer_group(self, i: int) -> str:
        return "enc" if i < self.split_index else "res"

    def shapes(self) -> dict[str, tuple[int, int]]:
        """Ordered parameter names and shapes; biases are ``1 x n`` rows."""
        dims = (self.input_dim, *self.hidden_widths, self.num_classes)
        out = {}
        for i in range(self.num_layers):
            g = self.layer_group(i)
            out[f"{g}.W{i}"] = (dims[i], dims[i + 1])
            out[f"{g}.b{i}"] = (1, dims[i + 1])
        out["disc.W0"] = (self.feature_dim, self.disc_hidden)
        out["disc.b0"] = (1, self.disc_hidden)
        out["disc.W1"] = (self.disc_hidden, 1)
        out["disc.b1"] = (1, 1)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self, *groups: str) -> list[str]:
        groups = groups or GROUPS
        return [n for n in self.tensors if n.split(".", 1)[0] in groups]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def weight(self, i: int) -> np.ndarray:
        return self.tensors[f"{self.config.layer_group(i)}.W{i}"]

    def bias(self, i: int) -> np.ndarray:
        return self.tensors[f"{self.config.layer_group(i)}.b{i}"]


@dataclass
class DiscTrace:
    z: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray      # after ReLU and dropout scaling
    scale: np.ndarray       # mask / (1 - rate); all ones in eval mode
    logits: np.ndarray      # (batch, 1)

    @property
    def mask(self) -> np.ndarray:
        return (self.scale != 0.0).astype(np.float64)


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre: list[np.ndarray]
    act: list[np.ndarray]
    logits: np.ndarray
    split_index: int
    disc: DiscTrace | None = field(default=None)

    @property
    def z(self) -> np.ndarray:
        return self.act[self.split_index - 1]


def init_params(config: ModelConfig, rng: np.random.Generator,
                disc_rng: np.random.Generator | None = None) -> ModelParams:
    """Uniform(-s, s) weights with s = sqrt(6 / fan_in), zero biases.

    Classifier weights are drawn from ``rng`` layer by layer; discriminator
    weights from ``disc_rng`` when given, so the classifier initialisation
    does not depend on whether a discriminator exists.
    """
    disc_rng = rng if disc_rng is None else disc_rng
    tensors = {}
    for name, (r, c) in config.shapes().items():
        if ".b" in name:
            tensors[name] = np.zeros((r, c))
        else:
            s = np.sqrt(6.0 / r)
            src = disc_rng if name.startswith("disc.") else rng
            tensors[name] = core_math.draw(src, r, c, "uniform", -s, s)
    return ModelParams(config, tensors)


def _check_input(x: np.ndarray, width: int, what: str) -> None:
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what} must have shape (batch, {width}), got {x.shape}")


def forward_classifier(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    cfg = params.config
    _check_input(x, cfg.input_dim, "input")
    pre, act = [], []
    a = x
    last = cfg.num_layers - 1
    for i in range(last):
        h = matmul(a, params.weight(i)) + params.bias(i)
        a = core_math.leaky_relu(h, cfg.leaky_slope)
        pre.append(h)
        act.append(a)
    logits = matmul(a, params.weight(last)) + params.bias(last)
    return ForwardTrace(x, pre, act, logits, cfg.split_index)


def dropout_scale(rng: np.random.Generator, rows: int, cols: int, rate: float) -> np.ndarray:
    """Inverted-dropout multiplier: kept units scaled by 1 / (1 - rate)."""
    if rate == 0.0:
        return np.ones((rows, cols))
    keep = core_math.draw(rng, rows, cols, "bernoulli", 1.0 - rate)
    return keep / (1.0 - rate)


def forward_discriminator(params: ModelParams, z: np.ndarray, train_mode: bool = False,
                          rng: np.random.Generator | None = None,
                          scale: np.ndarray | None = None) -> DiscTrace:
    """Discriminator pass on features ``z``.

    In train mode a fresh dropout mask is drawn from ``rng`` unless an
    explicit ``scale`` (mask already divided by the keep probability) is
    passed. ``sigmoid(trace.logits)`` is the probability of "real".
    """
    cfg = params.config
    _check_input(z, cfg.feature_dim, "features")
    pre = matmul(z, params["disc.W0"]) + params["disc.b0"]
    h = core_math.relu(pre)
    if scale is None:
        if train_mode and cfg.disc_dropout_rate > 0.0:
            if rng is None:
                raise UsageError("train-mode discriminator pass needs an rng")
            scale = dropout_scale(rng, *h.shape, cfg.disc_dropout_rate)
        else:
            scale = np.ones_like(h)
    elif scale.shape != h.shape:
        raise ShapeError(f"dropout scale {scale.shape} does not match hidden {h.shape}")
    hidden = h * scale
    logits = matmul(hidden, params["disc.W1"]) + params["disc.b1"]
    return DiscTrace(z, pre, hidden, scale, logits)


def _leaky_grad(pre: np.ndarray, slope: float) -> np.ndarray:
    # derivative at exactly 0 takes the positive branch
    return np.where(pre >= 0, 1.0, slope)


def discriminator_backward(params: ModelParams, dtrace: DiscTrace, d_logits: np.ndarray,
                           want_params: bool = True, want_features: bool = False):
    """Returns ``(param_grads, grad_wrt_z)``; unrequested parts are empty/None."""
    grads = {}
    if want_params:
        grads["disc.W1"] = matmul(dtrace.hidden.T, d_logits)
        grads["disc.b1"] = d_logits.sum(axis=0, keepdims=True)
    if not (want_params or want_features):
        return grads, None
    d_pre = matmul(d_logits, params["disc.W1"].T) * dtrace.scale
    d_pre = d_pre * (dtrace.pre >= 0)
    if want_params:
        grads["disc.W0"] = matmul(dtrace.z.T, d_pre)
        grads["disc.b0"] = d_pre.sum(axis=0, keepdims=True)
    dz = matmul(d_pre, params["disc.W0"].T) if want_features else None
    return grads, dz


def classifier_backward(params: ModelParams, trace: ForwardTrace, d_logits: np.ndarray | None,
                        targets, d_features: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Reverse pass through the classifier.

    ``d_features`` is an extra gradient injected at the encoder output
    (e.g. from the discriminator). Only the groups in ``targets`` get
    gradients; the pass stops as soon as nothing below is needed.
    """
    cfg = params.config
    targets = set(targets)
    grads: dict[str, np.ndarray] = {}
    need_below_split = bool(targets & {"enc", "input"})
    ell = cfg.split_index
    last = cfg.num_layers - 1

    if d_logits is None:
        if d_features is None or not need_below_split:
            return grads
        top, d_act = ell - 1, d_features
    else:
        if "res" not in targets and not need_below_split:
            return grads
        top, d_act = last, None

    for i in range(top, -1, -1):
        if i == last:
            delta = d_logits
        else:
            delta = d_act * _leaky_grad(trace.pre[i], cfg.leaky_slope)
        a_in = trace.act[i - 1] if i > 0 else trace.x
        group = cfg.layer_group(i)
        if group in targets:
            grads[f"{group}.W{i}"] = matmul(a_in.T, delta)
            grads[f"{group}.b{i}"] = delta.sum(axis=0, keepdims=True)
        if i == ell and not need_below_split:
            break
        if i == 0 and "input" not in targets:
            break
        d_act = matmul(delta, params.weight(i).T)
        if i == ell and d_features is not None and d_logits is not None:
            d_act = d_act + d_features
    else:
        grads["input"] = d_act
    return grads


def backward(params: ModelParams, trace: ForwardTrace, upstream: dict, targets) -> dict[str, np.ndarray]:
    """Exact gradients of a loss whose logit gradients are ``upstream``.

    ``upstream`` may hold ``"logits"`` (class logits) and/or
    ``"disc_logits"`` (requires ``trace.disc``). ``targets`` is a subset of
    ``{"enc", "res", "disc", "input"}``; the result holds keys for exactly
    those targets that the loss depends on.
    """
    targets = set(targets)
    unknown = targets - TARGETS
    if unknown:
        raise UsageError(f"unknown gradient targets {sorted(unknown)}")
    g_disc = upstream.get("disc_logits")
    if ("disc" in targets or g_disc is not None) and trace.disc is None:
        raise UsageError("discriminator gradients requested but the trace has no discriminator pass")
    grads: dict[str, np.ndarray] = {}
    dz = None
    if g_disc is not None:
        want_z = bool(targets & {"enc", "input"})
        g, dz = discriminator_backward(params, trace.disc, g_disc, "disc" in targets, want_z)
        grads.update(g)
    elif "disc" in targets:
        for n in params.names("disc"):
            grads[n] = np.zeros_like(params[n])
    grads.update(classifier_backward(params, trace, upstream.get("logits"), targets, dz))
    if "input" in targets and "input" not in grads:
        grads["input"] = np.zeros_like(trace.x)
    for g in ("enc", "res"):
        if g in targets:
            for n in params.names(g):
                grads.setdefault(n, np.zeros_like(params[n]))
    return grads


def input_gradient(params: ModelParams, x: np.ndarray, y, trace: ForwardTrace | None = None) -> np.ndarray:
    """Gradient of each row's own cross-entropy loss with respect to that row."""
    if trace is None:
        trace = forward_classifier(params, x)
    _, g = cross_entropy(trace.logits, y, reduction="sum")
    return classifier_backward(params, trace, g, {"input"})["input"]


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return forward_classifier(params, x).logits.argmax(axis=1)


MAGIC = b"AANM"
FORMAT_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    """Write ``params`` (and their config) in the little-endian AANM format."""
    header = {
        "config": params.config.to_dict(),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in params.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for t in params.tensors.values():
            f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if len(raw) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        entries = [(e["name"], tuple(e["shape"])) for e in header["tensors"]]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: malformed header ({e})") from None
    expected = config.shapes()
    if dict(entries) != expected or [n for n, _ in entries] != list(expected):
        raise CheckpointError(f"{path}: tensor list does not match the stored config")
    offset = 12 + hlen
    tensors = {}
    for name, shape in entries:
        nbytes = 8 * shape[0] * shape[1]
        if len(raw) < offset + nbytes:
            raise CheckpointError(f"{path}: payload truncated at byte {len(raw)} while reading {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f8", count=shape[0] * shape[1],
                                      offset=offset).astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return ModelParams(config, tensors)
