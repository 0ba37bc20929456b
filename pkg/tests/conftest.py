import numpy as np
import pytest

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


def _entry(marker) -> dict:
    number, title = marker.args
    return _criteria.setdefault(number, {"title": title, "outcomes": [], "notes": []})


@pytest.fixture
def note(request):
    """Attach a measured value to the acceptance line of the current criterion."""
    marker = request.node.get_closest_marker("criterion")
    if marker is None:
        return lambda text: None
    return _entry(marker)["notes"].append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and (rep.when == "call" or rep.failed):
        _entry(marker)["outcomes"].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["outcomes"] and all(e["outcomes"]) else "FAIL"
        detail = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {number} {status}: {e['title']} [{detail}]")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
