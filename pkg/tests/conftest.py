"""Collects one PASS/FAIL line per acceptance criterion and prints them at the end."""

import pytest

RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of an acceptance criterion.

    Call as ``criterion(number, title, passed, detail)``.  A test that dies
    before recording is reported as failed.
    """
    results = request.config.stash[RESULTS]
    recorded = []

    def record(number, title, passed, detail=""):
        results[number] = (title, bool(passed), detail)
        recorded.append(number)

    yield record
    if not recorded:
        name = request.node.name
        results.setdefault(name, (name, False, "raised before recording a result"))


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[RESULTS]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results, key=str):
        title, passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]")
