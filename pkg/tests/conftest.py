import pytest

_results = {}  # criterion -> (status, seconds across setup/call/teardown)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    status, duration = _results.get(name, ("PASS", 0.0))
    if report.failed or (report.when == "call" and report.skipped):
        status = "FAIL"
    _results[name] = (status, duration + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, duration) in _results.items():
        terminalreporter.write_line(f"{status}  {name}  ({duration:.1f} s)")
