import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPT_KEY = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def accept(request):
    """Record one acceptance-criterion verdict for the end-of-run summary."""
    lines = request.config.stash.setdefault(_ACCEPT_KEY, [])

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        lines.append((number, f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
