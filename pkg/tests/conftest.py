import numpy as np
import pytest

from fragdock import igso3
from fragdock.diffusion import DiffusionSchedule

_criteria = {}
_collected = set()


@pytest.fixture(scope="session")
def table_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("igso3")


@pytest.fixture(scope="session")
def table(table_cache):
    return igso3.cached_table(cache_dir=table_cache)


@pytest.fixture(scope="session")
def sched():
    return DiffusionSchedule()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record an acceptance result; printed in the terminal summary."""

    def record(number, title, ok, detail=""):
        _criteria[number] = (title, bool(ok), detail)
        print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} {detail}")
        return bool(ok)

    return record


def pytest_collection_finish(session):
    for item in session.items:
        if item.name.startswith("test_criterion_"):
            _collected.add(int(item.name.split("_")[2]))


def pytest_terminal_summary(terminalreporter):
    if not _collected:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_collected):
        if n in _criteria:
            title, ok, detail = _criteria[n]
            terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d} FAIL  (not recorded: the test errored)")
