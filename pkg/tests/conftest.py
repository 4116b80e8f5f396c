import os

import pytest
from hypothesis import settings

from doccat.corpus import build_dataset
from doccat.synth import SynthConfig, generate

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(scope="session")
def synth_tickets():
    return generate(SynthConfig())


@pytest.fixture(scope="session")
def synth_dataset(synth_tickets):
    return build_dataset(synth_tickets)


@pytest.fixture(scope="session")
def tickets_csv_path():
    path = os.environ.get("DOCCAT_TICKETS_CSV")
    if not path or not os.path.isfile(path):
        pytest.skip("set DOCCAT_TICKETS_CSV to the ticket dataset CSV to run dataset-bound checks")
    return path


# Acceptance reporting: tests marked @pytest.mark.criterion(n, "title") get one summary line each.

_criteria: dict[tuple, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = (marker.args[0], item.name)
    entry = _criteria.setdefault(key, {"title": marker.args[1], "outcome": "PASS", "detail": ""})
    if report.skipped:
        entry["outcome"] = "SKIP"
        entry["detail"] = str(report.longrepr[2]) if isinstance(report.longrepr, tuple) else ""
    elif report.failed:
        entry["outcome"] = "FAIL"
    details = [v for k, v in item.user_properties if k == "detail"]
    if details:
        entry["detail"] = "; ".join(details)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (number, name), e in sorted(_criteria.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        line = f"criterion {number}: {e['outcome']:4}  {e['title']}"
        if e["detail"]:
            line += f"  [{e['detail']}]"
        terminalreporter.write_line(line)
