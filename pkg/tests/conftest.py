"""Collects the acceptance criteria outcomes and prints one line per criterion."""

import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    details = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _RESULTS[number] = (report.outcome.upper(), title, details)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, details = _RESULTS[number]
        status = "PASS" if status == "PASSED" else "FAIL"
        line = f"[{status}] criterion {number:2d}: {title}"
        terminalreporter.write_line(line + (f"  ({details})" if details else ""))
