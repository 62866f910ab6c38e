import pytest

_VERDICTS = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL/SKIP line for the test's ``criterion`` marker.

    The test calls ``criterion(ok, detail)``; skips and exceptions are
    recorded by the report hook below.
    """
    marker = request.node.get_closest_marker("criterion")
    name = marker.args[0] if marker else request.node.name
    entry = {"nodeid": request.node.nodeid, "name": name, "status": None, "detail": ""}
    _VERDICTS.append(entry)

    def record(ok, detail=""):
        entry.update(status="PASS" if ok else "FAIL", detail=detail)
        return ok

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    for entry in _VERDICTS:
        if entry["nodeid"] != item.nodeid:
            continue
        if report.skipped and entry["status"] is None:
            reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else ""
            entry.update(status="SKIP", detail=str(reason).removeprefix("Skipped: "))
        elif report.failed and entry["status"] != "FAIL":
            entry.update(status="FAIL", detail=entry["detail"] or "raised before verdict")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for entry in _VERDICTS:
        status = entry["status"] or "FAIL"
        line = f"{status:4s}  {entry['name']}"
        if entry["detail"]:
            line += f"  ({entry['detail']})"
        terminalreporter.write_line(line)
