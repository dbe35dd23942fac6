"""Collects acceptance verdicts and prints one line per criterion at the end."""

import pytest

_VERDICTS: dict[str, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        if rep.skipped:
            status = "SKIP"
        else:
            status = "PASS" if rep.passed else "FAIL"
        _VERDICTS.setdefault(marker.args[0], []).append((status, detail))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id): acceptance criterion covered by the test")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: int(k.split("-")[1])):
        results = _VERDICTS[key]
        status = "FAIL" if any(s == "FAIL" for s, _ in results) else results[0][0]
        details = "; ".join(d for _, d in results if d)
        terminalreporter.write_line(f"{key}: {status}  {details}")
