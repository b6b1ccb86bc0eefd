import time
import warnings

import numpy as np
import pytest

# criterion number -> (title, outcome, seconds, measured values)
_CRITERIA: dict = {}


@pytest.fixture
def criterion(request):
    """Record measured values of an acceptance criterion for the summary."""
    marker = request.node.get_closest_marker("criterion")
    num, title = marker.args
    rec = {"title": title, "values": {}, "start": time.perf_counter()}
    _CRITERIA[num] = rec

    def note(key, value):
        rec["values"][key] = value
        request.node.user_properties.append((key, value))

    yield note
    rec["seconds"] = time.perf_counter() - rec["start"]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running acceptance check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    rec = _CRITERIA.get(marker.args[0])
    if rec is not None:
        rec["passed"] = rep.passed
        rec["seconds"] = time.perf_counter() - rec["start"]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        rec = _CRITERIA[num]
        status = {True: "PASS", False: "FAIL", None: "NOT RUN"}[rec.get("passed")]
        vals = "; ".join(f"{k}={_fmt(v)}" for k, v in rec["values"].items())
        tr.write_line(f"[{status}] criterion {num:2d} {rec['title']} "
                      f"({rec.get('seconds', float('nan')):.1f} s): {vals}")


@pytest.fixture(autouse=True)
def _quiet_regime_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*theory-matching regime.*")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)
