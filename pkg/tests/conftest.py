import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from probewalk.zz import DiagonalTarget, build_zz_scheme

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; it is echoed in the terminal summary."""

    def _report(number, ok, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").rstrip("ab"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ref_target():
    return DiagonalTarget(0.8, 0.2)


@pytest.fixture(scope="session")
def zz_scheme(ref_target):
    return build_zz_scheme(ref_target, 3.0, 0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
