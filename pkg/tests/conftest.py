import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def criterion(request):
    """Record the verdict of an acceptance criterion for the end-of-run summary.

    The entry starts as a failure so a test that errors out still shows up.
    """
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0]
    store = request.config.stash.setdefault(_RESULTS, {})
    store[number] = (False, "did not complete")

    def record(ok, detail):
        store[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_RESULTS, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, detail = store[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
