"""Shared pytest wiring: acceptance-criterion reporting."""
from __future__ import annotations

import pytest

_RESULTS: list[tuple[str, bool]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(name): a named acceptance criterion with a pinned tolerance"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        name = marker.kwargs.get("name", item.name)
        _RESULTS.append((name, report.passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed in _RESULTS:
        terminalreporter.write_line(f"[ACCEPTANCE] {name}: {'PASS' if passed else 'FAIL'}")
