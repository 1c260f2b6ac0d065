import os
from pathlib import Path

import numpy as np
import pytest

from advaug.core_math import make_rng
from advaug.network import ModelConfig, init_params

MNIST_DIR = Path(os.environ.get("MNIST_DIR", "/root/data/mnist"))


def mnist_available() -> bool:
    return (MNIST_DIR / "train-images-idx3-ubyte").exists()


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def small_params(seed=0, input_dim=6, hidden=(5, 4, 3), num_classes=3, split=2,
                 random_biases=True):
    cfg = ModelConfig(input_dim=input_dim, hidden_widths=hidden, num_classes=num_classes,
                      split_index=split, disc_hidden=4)
    rng = make_rng(seed)
    params = init_params(cfg, rng)
    if random_biases:
        for n in params.names():
            if ".b" in n:
                params.tensors[n] = rng.uniform(-0.3, 0.3, size=params[n].shape)
    return params


@pytest.fixture
def params():
    return small_params()


@pytest.fixture(scope="session")
def mnist_dir():
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set MNIST_DIR)")
    return MNIST_DIR


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
