"""Shared fixtures. Full continuation runs are cached for the whole session."""

from __future__ import annotations

import functools

import pytest

from etrm_wec.cli import execute, sweep_epsilon
from etrm_wec.config import config_for_case, load_config, shipped_config_path
from etrm_wec.continuation import run_continuation

SWEEP_EPS = (0.1, 0.03, 0.01, 0.003)


@functools.cache
def case_run(name: str):
    """``(summary, trajectory)`` for a shipped config, solved once per session."""
    summary, traj = execute(load_config(shipped_config_path(name)))
    assert traj is not None, summary.message
    return summary, traj


@functools.cache
def case1_sweep():
    rows, error = sweep_epsilon(config_for_case("case1"), SWEEP_EPS)
    assert not error, error
    return rows


@functools.cache
def case2_steps():
    """Every converged continuation step of case 2 as ``(record, solution)``."""
    steps = []
    cfg = config_for_case("case2")
    run_continuation(cfg.case, cfg.schedule, cfg.solver, on_step=lambda rec, sol: steps.append((rec, sol)))
    return steps


@pytest.fixture(scope="session")
def run_case():
    return case_run


@pytest.fixture(scope="session")
def sweep_rows():
    return case1_sweep()


@pytest.fixture(scope="session")
def case2_history():
    return case2_steps()


# One PASS/FAIL line per acceptance criterion at the end of the session.

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        if item.get_closest_marker("criterion") is not None:
            item.add_marker(pytest.mark.slow)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    previous = _criteria.get(number, (title, "PASS"))[1]
    if report.when == "call" or failed:
        _criteria[number] = (title, "FAIL" if failed or previous == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
