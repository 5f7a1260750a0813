import numpy as np
import pytest

from reflgame.catalog import build_spec
from reflgame.rbsde import LatticeModel
from reflgame.sde_core import TimeGrid

ACCEPTANCE_LINES: list = []


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def zero_sum():
    return build_spec("zero-sum-absolute-terminal")


@pytest.fixture(scope="session")
def decoupled():
    return build_spec("decoupled-quadratic-costs")


@pytest.fixture(scope="session")
def american_put():
    return build_spec("american-put")


@pytest.fixture(scope="session")
def small_lattice():
    def make(spec, steps=20, span=1.0, x0=0.0):
        return LatticeModel.for_spec(spec, TimeGrid.uniform(0.0, 1.0, steps), x0, span)

    return make
