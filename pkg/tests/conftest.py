import numpy as np
import pytest

from partialnet.data import synth_splits
from partialnet.nn import ArchitectureSpec

# acceptance results are collected here and reported after the run
ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}  {detail}")


@pytest.fixture
def tiny_arch():
    return ArchitectureSpec("simple-cnn", 2, 1, 4, (3, 8, 8))


@pytest.fixture(scope="session")
def tiny_task():
    return synth_splits(4, 8, 4, (3, 8, 8), 0.1, 0)


def f64(*rows):
    return np.array(rows, dtype=np.float64)
