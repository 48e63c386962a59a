import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from switchsynth.converter import default_problem, preset  # noqa: E402
from switchsynth.synthesis import decompose  # noqa: E402

DATA = Path(__file__).parent / "data"
PUBLISHED_DECOMPOSITION = DATA / "published_5level_decomposition.json"


@pytest.fixture(scope="session")
def params5():
    return preset("paper-5level")


@pytest.fixture(scope="session")
def problem5(params5):
    return default_problem(params5)


@pytest.fixture(scope="session")
def system5(problem5):
    return problem5.system


@pytest.fixture(scope="session")
def decomposition5(problem5):
    return decompose(problem5)


@pytest.fixture(scope="session")
def published_file():
    return PUBLISHED_DECOMPOSITION


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
