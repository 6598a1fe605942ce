import pytest

CRITERIA = {
    1: "metric oracle equivalence",
    2: "gradient verification",
    3: "histogram-match fidelity",
    4: "geometry round-trip",
    5: "connected-component oracle",
    6: "end-to-end phantom",
    7: "I/O bit-exactness",
}

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    n = getattr(report, "criterion", None)
    if n is None:
        return
    if report.when == "call" or report.outcome != "passed":
        ok = _results.get(n, True) and report.outcome == "passed"
        _results[n] = ok


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        verdict = "PASS" if _results[n] else "FAIL"
        terminalreporter.write_line(f"[{verdict}] criterion {n}: {CRITERIA[n]}")
