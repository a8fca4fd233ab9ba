"""Shared fixtures, hypothesis profiles and the acceptance summary."""

from collections import OrderedDict

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
    derandomize=True,
)
settings.load_profile("default")

# criterion number -> {"title": str, "outcomes": [(nodeid, passed, details)]}
_CRITERIA = OrderedDict()


@pytest.fixture
def report(request):
    """Attach a one-line detail string to the acceptance summary."""

    def _add(text):
        request.node.user_properties.append(("detail", text))
        print(text)

    return _add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        number, title = marker.args
        entry = _CRITERIA.setdefault(number, {"title": title, "outcomes": []})
        details = [v for k, v in item.user_properties if k == "detail"]
        entry["outcomes"].append((item.name, rep.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        ok = all(passed for _, passed, _ in entry["outcomes"])
        n = len(entry["outcomes"])
        tr.write_line(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {entry['title']} ({n} checks)")
        for name, passed, details in entry["outcomes"]:
            if not passed or details:
                tag = "ok" if passed else "FAILED"
                tr.write_line(f"    {tag:6s} {name}" + (f": {'; '.join(details)}" if details else ""))
