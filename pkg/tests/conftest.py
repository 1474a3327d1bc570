"""Collects acceptance-criterion outcomes and prints one line per criterion at the end of the run."""

import pytest

_outcomes: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    prev = _outcomes.get(number, ("PASS", title))[0]
    if report.when == "call" or failed:
        _outcomes[number] = ("FAIL" if failed or prev == "FAIL" else "PASS", title)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status, title = _outcomes[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
