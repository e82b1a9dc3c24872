"""Collects acceptance outcomes and prints one pass/fail line per criterion."""

from collections import defaultdict

import pytest

_outcomes = defaultdict(list)   # criterion -> [(nodeid, passed, details)]


@pytest.fixture
def detail(request):
    """Attach a human-readable measurement to the acceptance summary."""
    def add(text):
        request.node.user_properties.append(("detail", text))
        print(text)
    return add


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        crit = next((v for k, v in report.user_properties if k == "criterion"), None)
        if crit is None:
            return
        details = [v for k, v in report.user_properties if k == "detail"]
        _outcomes[crit].append((report.nodeid, report.passed, details))


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_outcomes):
        results = _outcomes[crit]
        ok = all(passed for _, passed, _ in results)
        tr.write_line(f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'}  ({len(results)} check(s))")
        for nodeid, passed, details in results:
            for d in details:
                tr.write_line(f"      {d}")
            if not passed:
                tr.write_line(f"      failed: {nodeid}")
