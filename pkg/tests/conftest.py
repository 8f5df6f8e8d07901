import os
from pathlib import Path

import numpy as np
import pytest

from lpcnn.mnist_io import CANONICAL_FILES

ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = Path(os.environ.get("LPCNN_DATA_DIR", ROOT / "data"))
CACHE_DIR = Path(os.environ.get("LPCNN_CACHE_DIR", ROOT / ".cache" / "acceptance"))


def _have_mnist() -> bool:
    return all((DATA_DIR / n).exists() or (DATA_DIR / (n + ".gz")).exists()
               for n in CANONICAL_FILES)


needs_mnist = pytest.mark.skipif(not _have_mnist(),
                                 reason=f"MNIST IDX files not found in {DATA_DIR}")


@pytest.fixture(scope="session")
def data_dir():
    if not _have_mnist():
        pytest.skip(f"MNIST IDX files not found in {DATA_DIR}")
    return DATA_DIR


@pytest.fixture(scope="session")
def mnist(data_dir):
    from lpcnn.experiments import load_mnist
    return load_mnist(data_dir)


@pytest.fixture(scope="session")
def digits(mnist):
    """100 test digits drawn with a fixed seed."""
    _, test = mnist
    idx = np.random.default_rng(0).choice(len(test), 100, replace=False)
    return test.images[idx]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
