import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, tuple[str, str, float, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and report.passed:
        return
    number, title = mark.args
    status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    note = getattr(item, "criterion_note", "")
    prev = _CRITERIA.get(number)
    if prev is None or prev[1] == "PASS":
        _CRITERIA[number] = (title, status, report.duration, note)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, duration, note = _CRITERIA[number]
        extra = f" | {note}" if note else ""
        terminalreporter.write_line(
            f"criterion {number:2d}: {status}  {title} ({duration:.1f} s){extra}")


@pytest.fixture()
def note(request):
    """Attach a one-line measurement summary to the criterion report."""
    def put(text: str) -> None:
        request.node.criterion_note = text
    return put


@pytest.fixture()
def stopwatch():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start
