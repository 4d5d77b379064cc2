import numpy as np
import pytest

from roma import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def leaf(a, grad=True):
    return T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
