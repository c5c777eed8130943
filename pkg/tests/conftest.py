"""One PASS/FAIL line per acceptance criterion, printed after the run.

Tests opt in with ``@pytest.mark.criterion(n)``; a criterion passes only if
every test carrying its number passed. Values logged through the
``measured`` fixture are printed under the matching line.
"""

from collections import defaultdict

import pytest

_outcomes = defaultdict(list)
_values = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def measured(request):
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0] if marker else None

    def log(name, value):
        request.node.user_properties.append((name, value))
        if number is not None:
            _values[number].append((name, value))

    return log


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes[marker.args[0]].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status = "PASS" if all(_outcomes[number]) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}")
        for name, value in _values[number]:
            shown = f"{value:.6g}" if isinstance(value, float) else str(value)
            terminalreporter.write_line(f"    {name} = {shown}")
