import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hfirst.aer import make_events, sort_events
from hfirst.network import available_backends

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

BACKENDS = available_backends()


def random_events(rng, n, width=128, height=128, t_max=100_000, cluster=None):
    """Sorted random events; ``cluster=(cx, cy, r)`` concentrates them in a square."""
    if cluster is None:
        x = rng.integers(0, width, n)
        y = rng.integers(0, height, n)
    else:
        cx, cy, r = cluster
        x = np.clip(cx + rng.integers(-r, r + 1, n), 0, width - 1)
        y = np.clip(cy + rng.integers(-r, r + 1, n), 0, height - 1)
    t = np.sort(rng.integers(0, t_max, n))
    return sort_events(make_events(t, x, y, rng.integers(0, 2, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ----------------------------------------------------
# Tests marked ``criterion(n)`` are folded into one pass/fail line per number,
# printed after the run. Details come from ``record_property("detail", ...)``.

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        if rep.skipped and not hasattr(rep, "wasxfail"):
            status = "SKIP"
        elif rep.passed and not hasattr(rep, "wasxfail"):
            status = "PASS"
        else:
            status = "FAIL"
        details = [v for k, v in item.user_properties if k == "detail"]
        _CRITERIA.setdefault(mark.args[0], []).append((item.name, status, details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        rows = _CRITERIA[n]
        states = {s for _, s, _ in rows}
        overall = "FAIL" if "FAIL" in states else ("PASS" if "PASS" in states else "SKIP")
        detail = "; ".join(d for _, _, ds in rows for d in ds)
        terminalreporter.write_line(f"criterion {n:>2}: {overall}  {detail}")
