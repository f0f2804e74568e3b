import pytest

_results: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        if failed or number not in _results:
            _results[number] = ("FAIL" if failed else "PASS", title)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        status, title = _results[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")
