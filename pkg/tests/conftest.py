import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from awdiff.image import make_rng  # noqa: E402


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def random_image(rng):
    def make(h=16, w=16):
        return rng.random((h, w))

    return make


# -- acceptance report ----------------------------------------------------------
# Tests marked ``@pytest.mark.criterion(n, "text")`` get one PASS/FAIL line each
# at the end of the run, in criterion order.

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            _criteria[item.nodeid] = mark.args


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for key in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(key, []):
            if getattr(report, "nodeid", None) in _criteria:
                # a failure in any phase wins over a passing call phase
                if outcomes.get(report.nodeid) in (None, "passed"):
                    outcomes[report.nodeid] = key
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (number, text) in sorted(_criteria.items(), key=lambda kv: kv[1][0]):
        if nodeid in outcomes:
            verdict = "PASS" if outcomes[nodeid] == "passed" else "FAIL"
            terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {text}")
