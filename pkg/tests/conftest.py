import numpy as np
import pytest

from greenshift.data import synthetic_splits
from greenshift.network import LayerSpec, build_network


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_splits():
    return synthetic_splits(120, 40, 40, seed=0, image_size=8, noise=0.1)


@pytest.fixture
def tiny_arch():
    # 1x6x6 input -> conv(1->2, k3) -> relu -> flatten -> dense(32->3): 20 + 2 + 96 + 3 = 121 params
    return [
        LayerSpec.conv2d(1, 2, 3),
        LayerSpec.relu(),
        LayerSpec.flatten(),
        LayerSpec.dense(32, 3),
    ]


@pytest.fixture
def small_dense_model():
    # 6 -> 5 -> 3 dense net, 35 + 18 = 53 parameters
    arch = [LayerSpec.dense(6, 5), LayerSpec.relu(), LayerSpec.dense(5, 3)]
    return build_network(arch, (6,), seed=3)


# --- acceptance reporting -------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "status": "PASS", "notes": []})
    if report.failed:
        entry["status"] = "FAIL"
    elif report.skipped and entry["status"] == "PASS":
        entry["status"] = "SKIP"


@pytest.fixture
def criterion_note(request):
    """Attach a measured value (a margin, a runtime) to the criterion's summary line."""
    number, title = request.node.get_closest_marker("criterion").args

    def note(text: str) -> None:
        _CRITERIA.setdefault(number, {"title": title, "status": "PASS", "notes": []})["notes"].append(text)

    return note


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        line = f"criterion {number:>2}: {entry['status']}  {entry['title']}"
        if entry["notes"]:
            line += "  [" + "; ".join(entry["notes"]) + "]"
        terminalreporter.write_line(line)
