import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, checks, detail, elapsed, limit):
        checks = dict(checks, runtime=elapsed <= limit)
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = (f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}; "
                f"{elapsed:.0f} s of {limit:.0f} s" + (f"; failed: {', '.join(failed)}" if failed else ""))
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
