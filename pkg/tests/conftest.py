from __future__ import annotations

import pytest

_RESULTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    entry = _RESULTS.setdefault(n, {"ok": True, "notes": []})
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        passed = rep.passed and not hasattr(rep, "wasxfail")
        entry["ok"] = entry["ok"] and passed
        for key, value in item.user_properties:
            if key == "detail":
                entry["notes"].append(str(value))
        if hasattr(rep, "wasxfail"):
            entry["notes"].append(f"expected failure: {rep.wasxfail}")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        status = "PASS" if e["ok"] else "FAIL"
        detail = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {n:2d}: {status}" + (f" | {detail}" if detail else ""))
