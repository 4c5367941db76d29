import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_GATE: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if report.passed:
        status = dict(item.user_properties).get("status", "PASS")
    elif report.skipped:
        status = "SKIP"
    else:
        status = "FAIL"
    _GATE.append((number, status, title, detail))


def pytest_terminal_summary(terminalreporter):
    if not _GATE:
        return
    terminalreporter.section("acceptance gate")
    for number, status, title, detail in sorted(_GATE):
        line = f"criterion {number:>2} {status:<12} {title}"
        terminalreporter.write_line(line + (f" | {detail}" if detail else ""))
