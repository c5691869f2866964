from __future__ import annotations

import datetime as dt
import textwrap
from pathlib import Path

import numpy as np
import pytest

from yellowrisk.climate import DailyWeatherSeries


def make_series(
    n_days: int,
    start: dt.date = dt.date(2020, 1, 1),
    tmin=0.0,
    tmax=10.0,
    precip=0.0,
    region: str = "R001",
) -> DailyWeatherSeries:
    """Series with scalar-or-array weather broadcast to ``n_days``."""
    full = lambda v: np.broadcast_to(np.asarray(v, dtype=np.float64), (n_days,)).copy()  # noqa: E731
    return DailyWeatherSeries(region, start, full(tmin), full(tmax), full(precip))


def write_ini(path: Path, text: str) -> Path:
    path.write_text(textwrap.dedent(text).lstrip(), encoding="utf-8")
    return path


SMALL_RUN = """
[climate]
seed = 7
years = 2018:2027
regions = 4
[factors]
institutions = CNRM_A, IPSL_A
scenarios = rcp45, rcp85
viruses = Polerovirus, BYV, Polerovirus+BYV
flight_models = M1-D1c, M2a-D1c
incidence_sets = QiN, QiE
exclude = IPSL_A/rcp45/*/*/QiE
[sensitivity]
institution = CNRM_A
"""


@pytest.fixture
def small_config(tmp_path: Path) -> Path:
    return write_ini(tmp_path / "small.ini", SMALL_RUN)


# --- acceptance report -----------------------------------------------------------
# Tests marked ``criterion(n, title)`` are grouped by n; the terminal summary
# prints one PASS/FAIL line per criterion. An expected failure counts as FAIL.

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "notes": [], "info": []})
    if report.when == "call":
        entry["info"].extend(text for key, text in item.user_properties if key == "info")
    if hasattr(report, "wasxfail") or report.failed or report.skipped:
        entry["ok"] = False
        reason = "expected failure" if hasattr(report, "wasxfail") else report.outcome
        entry["notes"].append(f"{item.name}: {reason}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        tr.write_line(f"{'PASS' if entry['ok'] else 'FAIL'}  criterion {number}: {entry['title']}")
        for note in entry["notes"]:
            tr.write_line(f"        {note}")
        for text in entry["info"]:
            tr.write_line(f"        info: {text}")
