import os
from pathlib import Path

import pytest

MNIST_FILES = (
    "train-images.idx3-ubyte",
    "train-labels.idx1-ubyte",
    "t10k-images.idx3-ubyte",
    "t10k-labels.idx1-ubyte",
)


def mnist_dir() -> Path | None:
    """Directory holding the four MNIST IDX files, from ``LWNN_MNIST_DIR`` or the default location."""
    d = Path(os.environ.get("LWNN_MNIST_DIR", "/root/data/mnist"))
    return d if all((d / f).is_file() for f in MNIST_FILES) else None


@pytest.fixture
def mnist():
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not found; set LWNN_MNIST_DIR")
    return d


def smoke_images(n: int = 200, seed: int = 0):
    """8x8 two-class set: class 0 has a bright left half, class 1 a bright right half."""
    import numpy as np

    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = rng.integers(0, 60, size=(n, 8, 8)).astype(np.uint8)
    for i, y in enumerate(labels):
        cols = slice(0, 4) if y == 0 else slice(4, 8)
        images[i, :, cols] += 180
    return images, labels.astype(np.uint8)


@pytest.fixture
def smoke_idx(tmp_path):
    """Write the smoke set as IDX train/test files; returns config keys pointing at them."""
    from lwnn.data import write_idx

    d = tmp_path / "smoke"
    d.mkdir()
    tr_x, tr_y = smoke_images(200, 0)
    te_x, te_y = smoke_images(60, 1)
    write_idx(d / "train-images", tr_x)
    write_idx(d / "train-labels", tr_y)
    write_idx(d / "test-images", te_x)
    write_idx(d / "test-labels", te_y)
    return {
        "train_images": str(d / "train-images"),
        "train_labels": str(d / "train-labels"),
        "test_images": str(d / "test-images"),
        "test_labels": str(d / "test-labels"),
        "paths": 1,
        "classes": 2,
        "input_shape": [8, 8, 1],
        "batch_size": 16,
        "epochs": 5,
    }


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record and print one acceptance line, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def report(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    def skip(number: int, reason: str) -> None:
        line = f"criterion {number:>2}: SKIP  {reason}"
        lines.append(line)
        print(line)
        pytest.skip(reason)

    report.skip = skip
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
