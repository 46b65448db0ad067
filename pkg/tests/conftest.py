import numpy as np
import pytest

from scalerc.dynsys import MgParams, integrate_mackey_glass
from scalerc.reservoir import DesnParams


@pytest.fixture(scope="session")
def mg100():
    return integrate_mackey_glass(MgParams(tau=100), n_samples=6000, seed=3)


@pytest.fixture(scope="session")
def mg30():
    return integrate_mackey_glass(MgParams(tau=30), n_samples=6000, seed=4)


@pytest.fixture(scope="session")
def small_params():
    return DesnParams(K=120, D=30, alpha=0.75, beta=0.176, gamma=1.24, rho=0.84,
                      sparsity=0.05, n_init=500, n_train=3000, seed=1)


@pytest.fixture(scope="session")
def small_model(mg30, small_params):
    from scalerc.desn import train

    return train(mg30, small_params)


def sine(n, period, amplitude=1.0, phase=0.0):
    return amplitude * np.sin(2 * np.pi * np.arange(n) / period + phase)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
