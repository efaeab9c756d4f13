import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """record(k, ok, detail) stores one pass/fail line for an acceptance criterion."""
    def record(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        CRITERIA[k] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
