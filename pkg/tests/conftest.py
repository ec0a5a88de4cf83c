import pytest
import torch

from helpers import smoke_run

torch.set_num_threads(max(1, min(4, torch.get_num_threads())))


@pytest.fixture(scope="session")
def short_smoke(tmp_path_factory):
    """A briefly trained smoke checkpoint for interface tests."""
    out = tmp_path_factory.mktemp("short_smoke")
    _, path = smoke_run(out, seed=0, max_steps=6)
    return path


# -- acceptance reporting ------------------------------------------------------------

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, description): acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, desc = marker
    failed = report.failed or (report.when == "call" and report.skipped)
    previous = _criteria.get(number, (desc, "PASS"))[1]
    if report.when == "call" or failed:
        _criteria[number] = (desc, "FAIL" if failed or previous == "FAIL" else "PASS")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        desc, status = _criteria[number]
        terminalreporter.write_line(f"Acceptance criterion {number}: {status} - {desc}")
