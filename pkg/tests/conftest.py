import numpy as np
import pytest

from mesofolio.data import generate_synthetic

PLANTED_BLOCKS = [(25, 0.4)] * 4


@pytest.fixture(scope="session")
def planted_panel():
    return generate_synthetic(100, 2000, PLANTED_BLOCKS, market_loading=0.5, noise_sd=1.0, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, floor=0.1):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + floor * np.eye(n)


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, passed, detail)``."""

    def record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"
        ACCEPTANCE.append((number, line))
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
