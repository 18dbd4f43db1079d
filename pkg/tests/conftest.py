import numpy as np
import pytest

from outdoor_rti.scene import Area, Deployment, NodeRecord


def square_deployment(side=10.0, channels=(11, 16), p=1.0):
    nodes = [NodeRecord(1, 0.0, 0.0), NodeRecord(2, side, 0.0),
             NodeRecord(3, side, side), NodeRecord(4, 0.0, side)]
    return Deployment(nodes, list(channels), Area(0.0, 0.0, side, side), p)


def six_node_deployment(p=1.0):
    """Six nodes around a 10 m x 10 m area (a 10 x 10 pixel grid at p = 1)."""
    nodes = [NodeRecord(1, 0.0, 0.0), NodeRecord(2, 5.0, 0.0), NodeRecord(3, 10.0, 0.0),
             NodeRecord(4, 10.0, 10.0), NodeRecord(5, 5.0, 10.0), NodeRecord(6, 0.0, 10.0)]
    return Deployment(nodes, [11, 26], Area(0.0, 0.0, 10.0, 10.0), p)


@pytest.fixture
def square():
    return square_deployment()


@pytest.fixture
def six_nodes():
    return six_node_deployment()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# Acceptance verdicts: each acceptance test records one line, and the lines
# are repeated in the terminal summary so they survive output capturing.
# ---------------------------------------------------------------------------

ACCEPTANCE_RESULTS = {}


def record_verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
