"""Session plumbing for the acceptance suite.

Every call to ``driver.run_bspauc`` made anywhere in the session is recorded
so the outer-monotonicity criterion can audit all end-to-end runs.  The
acceptance tests run last, the all-runs audit after everything else, and one
PASS/FAIL line per criterion is printed at the end.
"""

import pytest

from bspauc import driver

RUNS = []  # (label, ScheduleConfig, TrainReport)
_RESULTS = {}  # criterion -> list of outcomes
_TITLES = {}
DETAILS = {}  # criterion -> one line of measured values, filled in by the tests

_real_run = driver.run_bspauc


def _recording_run(train, cfg, *args, **kwargs):
    state, report = _real_run(train, cfg, *args, **kwargs)
    RUNS.append((_current[0], cfg, report))
    return state, report


_current = ["<collection>"]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k, title): acceptance criterion number and short title")
    driver.run_bspauc = _recording_run


def pytest_unconfigure(config):
    driver.run_bspauc = _real_run


def _rank(item):
    m = item.get_closest_marker("criterion")
    if m is None:
        return (0, 0)
    # the audit over all recorded runs goes last
    return (2, 0) if m.args[0] == 7 else (1, m.args[0])


def pytest_collection_modifyitems(session, config, items):
    items.sort(key=_rank)  # stable: keeps file order inside each group


def pytest_runtest_setup(item):
    _current[0] = item.nodeid


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    k = m.args[0]
    _TITLES[k] = m.args[1] if len(m.args) > 1 else ""
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _RESULTS.setdefault(k, []).append(rep.passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        status = "PASS" if all(_RESULTS[k]) else "FAIL"
        line = f"CRITERION {k}: {status}  {_TITLES[k]}"
        if k in DETAILS:
            line += f"  [{DETAILS[k]}]"
        terminalreporter.write_line(line)
