import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    detail = dict(report.user_properties).get("detail", "")
    _CRITERIA.append((crit, report.outcome, detail))


@pytest.fixture
def criterion(request, record_property):
    """Tag an acceptance test; returns a callable to attach a result summary."""
    mark = request.node.get_closest_marker("criterion")
    record_property("criterion", f"{mark.args[0]}: {mark.args[1]}")

    def detail(text):
        record_property("detail", text)
    return detail


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for crit, outcome, detail in sorted(_CRITERIA, key=lambda c: float(c[0].split(":")[0])):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome)
        line = f"[{status}] criterion {crit}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
