"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_OUTCOMES: dict[int, dict] = {}


@pytest.fixture
def detail(request):
    """Call with a short measurement summary; it is printed next to the verdict."""
    def put(text: str):
        request.node.user_properties.append(("detail", text))
        print(text)
    return put


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _OUTCOMES.setdefault(number, {"title": title, "status": "PASS", "details": []})
    if rep.when == "call" or rep.failed or rep.skipped:
        if rep.failed:
            entry["status"] = "FAIL"
        elif rep.skipped and entry["status"] == "PASS":
            entry["status"] = "SKIP"
    if rep.when == "teardown":
        entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        e = _OUTCOMES[number]
        extra = "; ".join(e["details"])
        line = f"criterion {number} {e['status']}: {e['title']}"
        terminalreporter.write_line(line + (f" [{extra}]" if extra else ""))
