import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """Store one summary line per acceptance criterion; printed at the end of the run."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def record(number, title, passed, detail):
        lines[number] = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
