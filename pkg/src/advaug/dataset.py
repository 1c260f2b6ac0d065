"""MNIST IDX reading/writing, splits, batching and a synthetic fixture."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_math import ConfigError
from .losses import DataError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class DatasetSplit:
    images: np.ndarray      # (N, d) float64 in [0, 1]
    labels: np.ndarray      # (N,) int64
    name: str = "train"

    def __post_init__(self):
        if self.images.ndim != 2 or self.labels.shape != (self.images.shape[0],):
            raise DataError(f"{self.name}: {self.images.shape} images vs "
                            f"{self.labels.shape} labels")

    def __len__(self) -> int:
        return self.images.shape[0]

    def check(self, num_classes: int, input_dim: int | None = None) -> None:
        if len(self) == 0:
            raise DataError(f"{self.name}: empty dataset")
        if input_dim is not None and self.images.shape[1] != input_dim:
            raise DataError(f"{self.name}: rows have {self.images.shape[1]} values, "
                            f"model expects {input_dim}")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise DataError(f"{self.name}: pixel values outside [0, 1]")
        if self.labels.min() < 0 or self.labels.max() >= num_classes:
            raise DataError(f"{self.name}: labels outside [0, {num_classes})")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    head = 4 + 4 * ndim
    if len(raw) < 4:
        raise DataError(f"{path}: truncated at byte {len(raw)}, no magic number")
    (found,) = struct.unpack_from(">I", raw, 0)
    if found not in (IMAGES_MAGIC, LABELS_MAGIC):
        raise DataError(f"{path}: not an IDX file (magic 0x{found:08x})")
    if found != magic:
        raise DataError(f"{path}: not an IDX file of the expected kind "
                        f"(magic 0x{found:08x}, expected 0x{magic:08x})")
    if len(raw) < head:
        raise DataError(f"{path}: truncated at byte {len(raw)} inside the header")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims))
    if len(raw) < head + size:
        raise DataError(f"{path}: truncated at byte {len(raw)}, payload needs "
                        f"{head + size} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=head).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Raw ``(N, rows, cols)`` uint8 images."""
    return _read_idx(path, IMAGES_MAGIC, 3)


def read_idx_labels(path) -> np.ndarray:
    return _read_idx(path, LABELS_MAGIC, 1)


def load_idx(images_path, labels_path, name: str = "train") -> DatasetSplit:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images_path} has {images.shape[0]} images but "
                        f"{labels_path} has {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return DatasetSplit(x, labels.astype(np.int64), name)


def load_mnist(directory, split: str = "train") -> DatasetSplit:
    img, lab = MNIST_FILES[split]
    d = Path(directory)
    return load_idx(d / img, d / lab, name=split)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", IMAGES_MAGIC))
        f.write(struct.pack(">3I", *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def quantize(x: np.ndarray) -> np.ndarray:
    """[0, 1] reals to bytes, ``round(x * 255)``."""
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def split_train_validation(data: DatasetSplit, validation_count: int):
    """Hold out the last ``validation_count`` rows, in file order."""
    n = len(data)
    if not 0 < validation_count < n:
        raise ConfigError(f"validation count must lie in (0, {n}), got {validation_count}")
    cut = n - validation_count
    train = DatasetSplit(data.images[:cut], data.labels[:cut], "train")
    val = DatasetSplit(data.images[cut:], data.labels[cut:], "validation")
    return train, val


def batches(data: DatasetSplit, batch_size: int, rng: np.random.Generator):
    """One epoch of shuffled ``(x, y)`` mini-batches; the last may be short."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    order = rng.permutation(len(data))
    for lo in range(0, len(data), batch_size):
        idx = order[lo:lo + batch_size]
        yield data.images[idx], data.labels[idx]


@dataclass(frozen=True)
class SyntheticSpec:
    n_per_class: int = 200
    dim: int = 784
    mu: float = 0.15
    noise_std: float = 0.05
    seed: int = 0


def make_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> DatasetSplit:
    """Two Gaussian blobs centred at 0.5 + mu * s (label 0) and 0.5 - mu * s
    (label 1), where s is a seeded +-1 pattern over the coordinates.

    The sign pattern keeps the two means off a common ray through the
    origin; a bias-free ReLU-family network cannot tell ``c * v`` from
    ``2 * c * v`` apart by direction. Rows alternate between the classes so
    that any contiguous slice, such as a trailing validation split, stays
    balanced.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n = spec.n_per_class
    pattern = rng.choice([-1.0, 1.0], size=spec.dim)
    y = np.tile([0, 1], n).astype(np.int64)
    means = 0.5 + spec.mu * np.where(y == 0, 1.0, -1.0)[:, None] * pattern
    x = means + spec.noise_std * rng.standard_normal((2 * n, spec.dim))
    np.clip(x, 0.0, 1.0, out=x)
    return DatasetSplit(x, y, "train")
