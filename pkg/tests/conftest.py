import numpy as np
import pytest

from veason.env import generate_dataset


@pytest.fixture(scope="session")
def small_manifest():
    return generate_dataset(11, 40, 0.2, n_holdout=10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
