import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_verdicts: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line; returns the boolean for asserting."""

    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} [{number}] {title}" + (f": {detail}" if detail else "")
        print(line)
        _verdicts.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_verdicts, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
