from __future__ import annotations

import numpy as np
import pytest

from lorentz_carleman.geodesics import orthonormal_basis
from lorentz_carleman.metrics import make_model

CENTRE = {1: np.array([0.3, 0.2]), 2: np.array([0.3, 0.2, 0.1])}

_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict():
    """Print and record one PASS/FAIL line per acceptance criterion."""

    def emit(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok

    return emit


def model_setup(name: str, n: int, delta: float = 0.0):
    model = make_model(name, n, delta)
    p = CENTRE[n]
    return model, p, orthonormal_basis(model, p)


@pytest.fixture(scope="session")
def warped2():
    return model_setup("warped", 2, 0.05)


@pytest.fixture(scope="session")
def mink2():
    return model_setup("minkowski", 2)
