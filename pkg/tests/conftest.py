import numpy as np
import pytest

from stepnet import nn
from stepnet.ingest import SynthConfig, synthesize
from stepnet.model import StepNet


def tiny_net(seed=0, hidden=3, fc1=5, fc2=4, n_in=6, dropout_rate=0.0):
    """Small StepNet with non-trivial random parameters (biases included)."""
    rng = np.random.default_rng(seed)
    net = StepNet(
        lstm=nn.LstmParams(rng.normal(0, 0.5, (4 * hidden, n_in)), rng.normal(0, 0.5, (4 * hidden, hidden)),
                           rng.normal(0, 0.5, 4 * hidden)),
        fc1=nn.DenseParams(rng.normal(0, 0.5, (fc1, hidden)), rng.normal(0, 0.1, fc1)),
        fc2=nn.DenseParams(rng.normal(0, 0.5, (fc2, fc1)), rng.normal(0, 0.1, fc2)),
        head=nn.DenseParams(rng.normal(0, 0.5, (2, fc2)), rng.normal(0, 0.1, 2)),
        dropout_rate=dropout_rate,
    )
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def walk_120():
    """Noiseless 120 spm, 60 s walk at 100 Hz."""
    return synthesize(SynthConfig(cadence_spm=120, duration_s=60, noise_sd=0.0, seed=3))


ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
