import pytest

from steerlearn.synthetic import write_dataset


@pytest.fixture(scope="session")
def road_dataset(tmp_path_factory):
    """Two synthetic 480x640 videos of ten frames each."""
    return write_dataset(tmp_path_factory.mktemp("roads") / "data", videos=2, frames=10, seed=0)


CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): one acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        CRITERIA[number] = (title, "FAIL" if call.excinfo is not None else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, status = CRITERIA[number]
        terminalreporter.write_line(f"[{status}] {number:2d}. {title}")
    passed = sum(s == "PASS" for _, s in CRITERIA.values())
    terminalreporter.write_line(f"{passed}/{len(CRITERIA)} criteria pass")
