import sys

import numpy as np
import pytest

from switchdelay.plant import Plant

A1 = np.array([[2.0, 1.0], [0.0, 1.0]])
A2 = np.array([[2.3, 1.1], [0.05, 1.2]])
B1 = np.array([[0.0], [1.0]])
B2 = np.array([[0.0], [1.02]])
K1 = np.array([[-12.0, -6.0]])
K2 = np.array([[-12.6961, -6.3725]])
K_BAR = np.array([[-12.3515, -6.1881]])


@pytest.fixture
def ref_plant():
    return Plant.from_matrices([A1, A2], [B1, B2], [K1, K2], 1.0)


@pytest.fixture
def twin_plant():
    """Two identically parameterised modes (epsilon = 0)."""
    return Plant.from_matrices([A1, A1], [B1, B1], [K1, K1], 1.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
