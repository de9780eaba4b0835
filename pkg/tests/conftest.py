"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    name = marker.args[0]
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if hasattr(report, "wasxfail"):
        status = "FAIL (expected)" if report.skipped else "PASS (unexpected)"
    else:
        status = "PASS" if report.passed else "FAIL"
    _RESULTS[(name, item.name)] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (name, test), (status, detail) in sorted(_RESULTS.items(), key=lambda kv: _order(kv[0][0])):
        terminalreporter.write_line(f"{status:<17} {name} [{test}] {detail}")


def _order(name):
    head = name.split()[0]
    return (int(head) if head.isdigit() else 99, name)
