from collections import OrderedDict

import numpy as np
import pytest

_CRITERIA = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id): acceptance criterion covered by the test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or report.failed:
        results = _CRITERIA.setdefault(marker.args[0], [])
        passed = report.passed if report.when == "call" else False
        notes = [f"{k}={v}" for k, v in report.user_properties]
        results.append((item.name, passed, notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: int(c[1:])):
        results = _CRITERIA[cid]
        ok = all(passed for _, passed, _ in results)
        failed = [name for name, passed, _ in results if not passed]
        notes = [n for _, _, ns in results for n in ns]
        line = f"{cid}: {'PASS' if ok else 'FAIL'} ({len(results)} checks)"
        if notes:
            line += " " + " ".join(notes)
        if failed:
            line += " failing: " + ", ".join(failed)
        terminalreporter.write_line(line)
