import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from snfgp.data import default_synthetic_spec, generate_synthetic, split_dataset  # noqa: E402
from snfgp.model import TrainConfig, train  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    spec = default_synthetic_spec(P=64)
    ds = generate_synthetic(spec, 40, rng_seed=2)
    return split_dataset(ds, rng_seed=3)


@pytest.fixture(scope="session")
def small_model(small_dataset):
    model, trace = train(small_dataset, TrainConfig(K=4, batch_size=32, epochs=15, hidden=16, seed=1))
    return model, trace


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
