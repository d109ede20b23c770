import numpy as np
import pytest

from landmark_dl.data import Dataset
from landmark_dl.simulate import SCENARIO_1, calibrated, make_rng, sample_scenario


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo runs")


@pytest.fixture(scope="session")
def scenario1():
    return calibrated(SCENARIO_1)


@pytest.fixture(scope="session")
def sim1(scenario1):
    """One scenario-1 dataset, n = 1000."""
    return sample_scenario(scenario1, 1000, make_rng(2024))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def discrete_dataset(n, rng, censor=False, p_treat=0.5):
    """Binary covariate, exponential times, marker depends on (A, L)."""
    L = (rng.random(n) < 0.4).astype(float)
    A = (rng.random(n) < p_treat).astype(int)
    T = rng.exponential(1.0 / (0.3 + 0.3 * L + 0.2 * A))
    if censor:
        C = rng.exponential(4.0, n)
    else:
        C = np.full(n, np.inf)
    time = np.minimum(T, C)
    status = (T <= C).astype(int)
    Y = 40 + 5 * A + 8 * L + 10 * rng.standard_normal(n)
    marker = np.where(time > 1.0, Y, np.nan)
    return Dataset.from_arrays(time, status, A, L[:, None], marker)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion, ok, detail):
    """Print and keep one PASS/FAIL line for the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
