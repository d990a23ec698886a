import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    k = mark.args[0]
    entry = _CRITERIA.setdefault(k, {"ok": True, "detail": [], "title": mark.kwargs.get("title", "")})
    if rep.failed:
        entry["ok"] = False
    if rep.when == "call":
        entry["detail"] += [v for key, v in item.user_properties if key == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        e = _CRITERIA[k]
        line = f"criterion {k:2d} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["detail"]:
            line += "  [" + "; ".join(e["detail"]) + "]"
        terminalreporter.write_line(line)
