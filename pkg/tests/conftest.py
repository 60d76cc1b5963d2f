import math
import os
import stat
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

from fpwhitebox.core import MinutiaeSet

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    crit = getattr(report, "_criterion", None)
    if crit is None:
        return
    n, text = crit
    entry = _CRITERIA.setdefault(n, {"text": text, "ok": True, "seen": False})
    if report.when == "call" or report.outcome != "passed":
        entry["seen"] = True
        entry["ok"] = entry["ok"] and report.outcome == "passed"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep._criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {e['text']}")


def random_set(rng, n, width=200, height=200, integer=False, margin=0) -> MinutiaeSet:
    if integer:
        x = rng.integers(margin, width - margin, size=n).astype(float)
        y = rng.integers(margin, height - margin, size=n).astype(float)
    else:
        x = rng.uniform(margin, width - margin - 1e-9, size=n)
        y = rng.uniform(margin, height - margin - 1e-9, size=n)
    t = rng.uniform(0, 2 * math.pi, size=n)
    return MinutiaeSet.from_arrays(x, y, t, width, height)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_stub(tmp_path):
    """Write an executable Python script and return its path."""

    def _make(name: str, body: str) -> Path:
        p = tmp_path / "bin" / name
        p.parent.mkdir(exist_ok=True)
        p.write_text(f"#!{sys.executable}\nimport sys, time\n" + textwrap.dedent(body), encoding="utf-8")
        p.chmod(p.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
        return p

    if os.name == "nt":
        pytest.skip("stub executables need a POSIX shebang")
    return _make
