"""Collects the outcome of every acceptance criterion and prints one line each."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        detail = rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else "error"
        _RESULTS[number] = (title, "FAIL", detail.splitlines()[0] if detail else "")
    elif rep.when == "call":
        _RESULTS[number] = (title, "PASS" if rep.passed else "SKIP", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, status, detail = _RESULTS[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
