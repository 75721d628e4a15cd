import numpy as np
import pytest

from csblab.core import Orthotope, TimeGrid
from csblab.loss import EVALS, Explorer
from csblab.models import (DENGUE_FACTORS, DENGUE_RANGES, dengue_grid, dengue_model,
                           dengue_nominal, identity_model)

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")


@pytest.fixture(autouse=True)
def _reset_counter():
    EVALS.reset()
    yield


@pytest.fixture(scope="session")
def dengue():
    return dengue_model()


@pytest.fixture(scope="session")
def dengue_explorer(dengue):
    return Explorer(dengue, dengue_nominal(), dengue_grid())


@pytest.fixture(scope="session")
def estimation_box():
    lo, hi = zip(*(DENGUE_RANGES[n] for n in DENGUE_FACTORS))
    return Orthotope.from_bounds(lo, hi, DENGUE_FACTORS)


@pytest.fixture
def identity_explorer():
    return Explorer(identity_model(), [1.0], TimeGrid([0.0, 1.0, 2.0]))
