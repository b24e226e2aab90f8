import numpy as np
import pytest

from geosolve import numerics as nx


@pytest.fixture(autouse=True)
def float64_mode():
    """Every test starts in 64-bit mode with graph recording on."""
    nx.set_mode("test")
    yield
    nx.set_mode("test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, echoed again at the end of the run
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
