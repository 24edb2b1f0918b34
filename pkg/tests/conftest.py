"""Shared fixtures and the per-criterion summary for the acceptance suite."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("klap", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("klap")

_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, [title, True, False])
    if report.when == "call" or report.failed:
        entry[2] = True
        if report.failed:
            entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, ran = _CRITERIA[number]
        status = "PASS" if passed and ran else ("FAIL" if ran else "NOT RUN")
        terminalreporter.write_line(f"criterion {number:>2} {status}: {title}")
