"""Dense float64 matrix helpers and the seeded random source.

Tensors are plain 2-D ``numpy.ndarray`` objects of dtype float64 in C
(row-major) order. Randomness comes from numpy's PCG64 bit generator, whose
output stream is fixed by its seed on every platform.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def as_tensor(values) -> np.ndarray:
    t = np.array(values, dtype=DTYPE, order="C", ndmin=2)
    if t.ndim != 2:
        raise ShapeError(f"expected a 2-D tensor, got shape {t.shape}")
    return t


def _check_matmul(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product through BLAS.

    The result for a given pair of shapes is reproducible run to run, but
    the kernel may fuse multiply-adds, so it is not bitwise equal to the
    textbook loop on arbitrary reals. Use :func:`matmul_ordered` when that
    is required.
    """
    _check_matmul(a, b)
    return a @ b


def matmul_ordered(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with each entry summed over the inner index in
    ascending order, one rounded multiply and one rounded add per term.

    Bitwise identical to the naive triple loop. Vectorised over the output
    entries only, so it is much slower than :func:`matmul` on wide inputs.
    """
    _check_matmul(a, b)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=DTYPE)
    for k in range(a.shape[1]):
        out += np.multiply.outer(a[:, k], b[k, :])
    return out


def leaky_relu(t: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(t >= 0, t, slope * t)


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0.0)


def sigmoid(t: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    t = np.asarray(t, dtype=DTYPE)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sign(t: np.ndarray) -> np.ndarray:
    # np.sign already maps 0 to 0
    return np.sign(t)


_CATALOG = {
    "leaky_relu": lambda t, slope=0.01: leaky_relu(t, slope),
    "relu": lambda t: relu(t),
    "sigmoid": lambda t: sigmoid(t),
    "sign": lambda t: sign(t),
    "add": lambda t, value: t + value,
    "mul": lambda t, value: t * value,
}


def map_elementwise(t: np.ndarray, name: str, **params) -> np.ndarray:
    """Apply a catalogued scalar function to every entry of ``t``."""
    try:
        fn = _CATALOG[name]
    except KeyError:
        raise ConfigError(
            f"unknown elementwise function {name!r}; "
            f"choose from {sorted(_CATALOG)}"
        ) from None
    return np.asarray(fn(np.asarray(t, dtype=DTYPE), **params), dtype=DTYPE)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator seeded with a 64-bit unsigned integer."""
    if not 0 <= int(seed) < 2**64:
        raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_rngs(seed: int, names: list[str]) -> dict[str, np.random.Generator]:
    """Independent named streams derived from one root seed.

    Streams are assigned by position in ``names``, so callers must keep the
    order stable.
    """
    if not 0 <= int(seed) < 2**64:
        raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(c)) for n, c in zip(names, children)}


def draw(rng: np.random.Generator, rows: int, cols: int, dist: str,
         *params: float) -> np.ndarray:
    """Draw a ``rows x cols`` tensor.

    ``dist`` is ``"uniform"`` with parameters ``(a, b)``, giving values in
    ``[a, b)``, or ``"bernoulli"`` with parameter ``p``, giving 0/1 values.
    Both consume exactly ``rows * cols`` doubles from ``rng``.
    """
    if dist == "uniform":
        a, b = params
        if not a < b:
            raise ConfigError(f"uniform needs a < b, got ({a}, {b})")
        u = rng.random((rows, cols), dtype=DTYPE)
        # rounding can land exactly on b
        return np.minimum(a + (b - a) * u, np.nextafter(b, a))
    if dist == "bernoulli":
        (p,) = params
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"bernoulli needs 0 <= p <= 1, got {p}")
        u = rng.random((rows, cols), dtype=DTYPE)
        return (u < p).astype(DTYPE)
    raise ConfigError(f"unknown distribution {dist!r}")
