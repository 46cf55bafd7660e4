from __future__ import annotations

from collections import OrderedDict
from importlib import resources
from pathlib import Path

import pytest
import rdflib
from hypothesis import HealthCheck, settings

from lodbridge.clock import ManualClock

# rdflib serves as an oracle; it must compare lexical forms, not rewrite them
rdflib.NORMALIZE_LITERALS = False

# property tests are reproducible run to run and not timing-sensitive
settings.register_profile("repo", derandomize=True, deadline=None, database=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

FIXTURES = Path(str(resources.files("lodbridge.data").joinpath("fixtures")))

CRITERIA = OrderedDict([
    (1, "listing reproduction (transform)"),
    (2, "listing reproduction (DCAT-AP)"),
    (3, "listing reproduction (SPARQL)"),
    (4, "MQA distribution arithmetic"),
    (5, "publish-subscribe contract"),
    (6, "query-engine oracle equivalence"),
    (7, "round-trip suites"),
    (8, "idempotence and conservation"),
    (9, "MQA differential property"),
    (10, "end-to-end scenario"),
])
_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes.setdefault(marker.args[0], []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        else:
            status = "PASS" if all(r == "passed" for r in results) else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2} {title:<36} {status}")


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def clock() -> ManualClock:
    return ManualClock("2021-11-10T15:00:00Z")
