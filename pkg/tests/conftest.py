"""Collects per-criterion outcomes from the acceptance suite and prints them."""

import pytest

_RESULTS: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


@pytest.fixture
def measured(request):
    """Dict of measured quantities shown next to the criterion's verdict."""
    marker = request.node.get_closest_marker("criterion")
    if marker is None:
        return {}
    entry = _RESULTS.setdefault(marker.args[0], {"outcome": "pending", "details": {}})
    return entry["details"]


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = report.user_properties and dict(report.user_properties).get("criterion")
    if name:
        _RESULTS.setdefault(name, {"outcome": "pending", "details": {}})["outcome"] = report.outcome


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, entry in _RESULTS.items():
        verdict = "PASS" if entry["outcome"] == "passed" else "FAIL"
        details = ", ".join(f"{k}={_fmt(v)}" for k, v in entry["details"].items())
        terminalreporter.write_line(f"{verdict}  {name}" + (f"  [{details}]" if details else ""))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)
