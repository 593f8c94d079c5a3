"""Shared pytest plumbing: one summary line per release gate.

Tests marked @pytest.mark.criterion("...") are collected into an
"acceptance gates" section at the end of the run, one [ACCEPTANCE]
PASS/FAIL line each, so gate status is readable without scrolling
through the full test listing.
"""
import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(label): release gate reported in the run summary"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion_label = marker.args[0]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    gates: dict[str, bool] = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            label = getattr(rep, "criterion_label", None)
            if label is None:
                continue
            ok = status == "passed"
            if rep.when != "call" and ok:
                continue  # passing setup/teardown phases carry no verdict
            gates[label] = gates.get(label, True) and ok
    if not gates:
        return
    terminalreporter.section("acceptance gates")
    for label, ok in gates.items():
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[ACCEPTANCE] {verdict}: {label}")
