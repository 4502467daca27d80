import sys
import numpy as np
import pytest

from fedsim.data import DataContainer, generate_synthetic


@pytest.fixture
def blobs():
    """Small, easy 3-class problem in 4 dimensions."""
    return generate_synthetic(3, 40, 4, seed=11)


@pytest.fixture
def ten_class():
    return generate_synthetic(10, 60, 8, seed=5, separation=0.3, noise=0.1)


def labels_only(counts):
    """Container whose features are just the row index; labels repeated per ``counts``."""
    labels = np.repeat(np.arange(len(counts)), counts)
    return DataContainer(np.arange(len(labels), dtype=float).reshape(-1, 1), labels, len(counts))


def make_clients(data, plan_sizes, cfg, start=0):
    """Slice ``data`` into consecutive client datasets of the given sizes."""
    from fedsim.managers import SimClient

    clients, pos = [], start
    for cid, n in enumerate(plan_sizes):
        clients.append(SimClient(cid, data.subset(np.arange(pos, pos + n)), cfg))
        pos += n
    return clients


@pytest.fixture
def small_fed(ten_class):
    """8 clients of 60 records each on a 10-class problem, plus a test set."""
    from fedsim.data import train_test_split
    from fedsim.model import ModelSpec, TrainConfig

    train, test = train_test_split(ten_class, 0.2, seed=0)
    cfg = TrainConfig(epochs=2, batch_size=16, learning_rate=0.3)
    spec = ModelSpec.logistic(train.dim, 10)
    return spec, make_clients(train, [60] * 8, cfg), test


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance criterion lines collected during the run."""
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
