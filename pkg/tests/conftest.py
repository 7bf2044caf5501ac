from importlib.resources import files

import pytest
from hypothesis import settings

settings.register_profile("pwhetero", deadline=None, max_examples=40)
settings.load_profile("pwhetero")

DECKS = files("pwhetero") / "data" / "decks"


@pytest.fixture
def scf_deck_path():
    return str(DECKS / "GeAlP.scf.in")


@pytest.fixture
def bands_deck_path():
    return str(DECKS / "GeAlP.b-nscf.in")


# --- acceptance report -----------------------------------------------------------
# Tests marked ``criterion(number, title)`` are collected into one pass/fail
# line per criterion at the end of the run.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (report.when == "call" or report.failed):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "ran": False})
    entry["ran"] = entry["ran"] or report.when == "call"
    entry["passed"] = entry["passed"] and not report.failed and not report.skipped


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["passed"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}  {status}  {entry['title']}")
