import time

import numpy as np
import pytest

from retcn.data import SynthConfig, synth_generate
from retcn.model import ModelConfig, build
from retcn.train import TrainConfig, train_loop


@pytest.fixture(scope="session")
def synth_ds():
    """The default 4-class, 800-sample synthetic set."""
    return synth_generate(SynthConfig())


@pytest.fixture(scope="session")
def small_ds():
    return synth_generate(SynthConfig(samples_per_class=12, T=16, seed=3))


@pytest.fixture(scope="session")
def default_run(synth_ds):
    """One full default training run, shared by the tests that need a
    trained model. Returns (TrainResult, wall seconds)."""
    t0 = time.perf_counter()
    result = train_loop(build(ModelConfig(), 0), synth_ds.train_split(), synth_ds.val_split(),
                        TrainConfig(seed=0))
    return result, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
