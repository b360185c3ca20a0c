"""Collects one pass/fail line per acceptance criterion for the terminal summary."""
import pytest

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not (rep.when == "setup" and rep.failed)):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "passed": True, "failed_tests": []})
    if not rep.passed:
        entry["passed"] = False
        entry["failed_tests"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        line = f"criterion {number:2d} {'PASS' if e['passed'] else 'FAIL'}  {e['title']}"
        if e["failed_tests"]:
            line += f"  (failed: {', '.join(e['failed_tests'])})"
        terminalreporter.write_line(line)
