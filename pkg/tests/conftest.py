"""Shared fixtures: trained models are expensive enough to build once per session."""

import numpy as np
import pytest

from normalcy.simulate import ScenarioSpec, simulate
from normalcy.swdbn import SwdbnConfig, train_shared_level


@pytest.fixture(scope="session")
def normal_training_run():
    """Three noisy laps of the default perimeter."""
    return simulate(ScenarioSpec(laps=3, seed=0, noise_sigma=0.01))


@pytest.fixture(scope="session")
def shared_level(normal_training_run):
    _, xy, _ = normal_training_run
    return train_shared_level(xy, SwdbnConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report: one line per criterion -------------------------------------

_criteria: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        prev = _criteria.get(n)
        if prev is not None:
            # a criterion passes only if every part passes; runtimes add up
            status = prev[1] if prev[1] != "PASS" else status
            _criteria[n] = (title, status, prev[2] + report.duration)
        else:
            _criteria[n] = (title, status, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status, seconds = _criteria[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title} ({seconds:.2f} s)")
