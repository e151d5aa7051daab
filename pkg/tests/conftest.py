import numpy as np
import pytest
from hypothesis import settings

from gapcore.domains import CakeParams, make_cake_mdp, make_corpus

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def cake():
    return make_cake_mdp(CakeParams(0.5, 0.1))


@pytest.fixture(scope="session")
def corpus():
    return make_corpus(100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from .acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
