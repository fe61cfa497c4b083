import numpy as np
import pytest

from graphwarp.gradcheck import random_batch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_batch(rng):
    """Two random graphs of 4-10 nodes, R=2 relations, padded."""
    return random_batch(rng, n_graphs=2, n_relations=2)


# one PASS/FAIL line per acceptance criterion, printed at the end of the session
_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion being checked")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = ""
        if report.failed:
            detail = str(call.excinfo.value).strip().splitlines()[0][:160] if call.excinfo else ""
        _CRITERIA.append((marker.args[0], report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        line = f"{'PASS' if passed else 'FAIL'}  {name}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
