import os

import pytest
from hypothesis import HealthCheck, settings

from hypwalk.groups import free_group, free_product, lattice
from hypwalk.tree import TreeGreen
from hypwalk.walk import simple_random_walk

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def F2():
    return free_group(2)


@pytest.fixture(scope="session")
def srw2(F2):
    return simple_random_walk(F2)


@pytest.fixture(scope="session")
def tree2(srw2):
    return TreeGreen(srw2)


@pytest.fixture(scope="session")
def tree3():
    return TreeGreen(simple_random_walk(free_group(3)))


@pytest.fixture(scope="session")
def Z2Z2Z2():
    return free_product([2, 2, 2])


@pytest.fixture(scope="session")
def Z():
    return lattice(1)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    failed = rep.failed or hasattr(rep, "wasxfail")
    if rep.when == "call" or failed:
        prev = item.config._criteria.get(num)
        ok = not failed and (prev is None or prev[1])
        item.config._criteria[num] = (title, ok)


def pytest_terminal_summary(terminalreporter, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(crit):
        title, ok = crit[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {title}")
