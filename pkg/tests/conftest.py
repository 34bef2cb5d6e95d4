import numpy as np
import pytest

from fearnet import TrainingConfig


def blobs(classes=3, dim=4, per_class=20, separation=8.0, seed=0):
    """Well-separated Gaussian clusters as float32 ``(x, y)``."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, dim))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    x = centers.repeat(per_class, axis=0) + rng.standard_normal((classes * per_class, dim))
    y = np.repeat(np.arange(classes), per_class)
    return x.astype(np.float32), y


@pytest.fixture
def tiny_config():
    return TrainingConfig(
        sleep_frequency=2,
        base_epochs=40,
        consolidation_epochs=10,
        bla_epochs=5,
        offline_epochs=40,
        batch_size=16,
        hidden_dims=(12, 6),
        seed=0,
    )


ACCEPTANCE_LINES = []


def verdict(number, title, ok, detail):
    """Record one acceptance line; the terminal summary prints them all."""
    line = f"criterion {number:<3} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
