import pytest

from dropsample import _backend

BACKENDS = ["numpy"] + (["numba"] if _backend.HAVE_NUMBA else [])

# criterion number -> list of (test id, passed)
_CRITERIA: dict = {}


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per available kernel backend."""
    saved = _backend.USE_NUMBA
    _backend.USE_NUMBA = request.param == "numba"
    yield request.param
    _backend.USE_NUMBA = saved


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item.user_properties.append(("criterion", m.args[0]))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None or report.when == "teardown" or (report.when == "setup" and report.passed):
        return
    _CRITERIA.setdefault(crit, []).append((report.nodeid.split("::")[-1], report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_CRITERIA):
        results = _CRITERIA[crit]
        failed = [name for name, ok in results if not ok]
        status = "PASS" if not failed else "FAIL"
        detail = f" (failed: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {crit}: {status} [{len(results) - len(failed)}/{len(results)}]{detail}")
