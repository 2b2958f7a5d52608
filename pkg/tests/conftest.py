import numpy as np
import pytest

from nnqp import NnqProblem


_criteria = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and report.outcome == "passed":
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    entry = _criteria.setdefault(props["criterion"], {"title": props.get("title", ""), "failed": False, "warn": False, "details": []})
    entry["failed"] |= report.outcome != "passed"
    entry["warn"] |= props.get("status") == "WARN"
    if props.get("detail"):
        entry["details"].append(props["detail"])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria):
        entry = _criteria[key]
        status = "FAIL" if entry["failed"] else ("WARN" if entry["warn"] else "PASS")
        line = f"[{status}] criterion {key:>2}: {entry['title']}"
        if entry["details"]:
            line += " | " + "; ".join(entry["details"])
        terminalreporter.write_line(line)


@pytest.fixture
def criterion(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    record_property("criterion", marker.args[0])
    record_property("title", marker.args[1])

    def note(detail, status=None):
        record_property("detail", detail)
        if status:
            record_property("status", status)

    return note


def random_psd(rng, n, rank=None):
    m = rng.standard_normal((rank or n, n))
    return m.T @ m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def meb_01():
    """Minimum enclosing ball of {0, 1} on the line."""
    return NnqProblem(gram=[[0.0, 0.0], [0.0, 1.0]], linear=[0.0, -1.0], eq_matrix=[[1.0, 1.0]], eq_rhs=[1.0], label="meb")
