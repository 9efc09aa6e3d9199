import pytest

# criterion id -> (title, list of outcomes)
_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    cid, title = mark.args
    slot = _CRITERIA.setdefault(cid, (title, []))
    if rep.failed:
        slot[1].append("FAIL")
    elif rep.when == "call":
        slot[1].append("SKIP" if rep.skipped else "PASS")
    elif rep.skipped:
        slot[1].append("SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[cid]
        if "FAIL" in outcomes:
            verdict = "FAIL"
        elif outcomes and all(o == "PASS" for o in outcomes):
            verdict = "PASS"
        else:
            verdict = "SKIP"
        terminalreporter.write_line(f"criterion {cid}: {verdict}  {title}")
