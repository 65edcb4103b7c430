from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def leader_csv():
    return DATA / "leader_sample.csv"


@pytest.fixture
def follower_csv():
    return DATA / "follower_sample.csv"


@pytest.fixture
def stops_csv():
    return DATA / "stop_tests.csv"


_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.failed):
        name = report.nodeid.split("::")[-1]
        _acceptance[name] = "PASS" if report.passed and name not in _acceptance else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in sorted(_acceptance.items()):
        terminalreporter.write_line(f"{verdict}  {name}")
