import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from drddl import _accel

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run the test once through each kernel implementation."""
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param == "numba")
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one summary line per acceptance criterion, collected from test_acceptance.py
_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.skipped or report.failed:
        if report.skipped:
            outcome = "SKIP"
        elif report.failed:
            outcome = "FAIL"
        else:
            outcome = "PASS"
        detail = dict(report.user_properties).get("detail", "")
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2].removeprefix("Skipped: ")
        if report.when == "call" or name not in _criteria:
            _criteria[name] = (outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        outcome, detail = _criteria[name]
        label = name[len("test_"):].replace("_", " ", 2).replace("_", " ")
        terminalreporter.write_line(f"{outcome:4}  {label}" + (f"  [{detail}]" if detail else ""))
