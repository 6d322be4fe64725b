import pytest

_CRITERIA = []


def _label(item):
    doc = (getattr(item.obj, "__doc__", None) or item.name).strip().splitlines()[0]
    doc = doc.rstrip(".")
    callspec = getattr(item, "callspec", None)
    return f"{doc} [{callspec.id}]" if callspec else doc


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.get_closest_marker("acceptance") is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA.append((_label(item), "PASS" if rep.passed else "FAIL", rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, secs in _CRITERIA:
        terminalreporter.write_line(f"{status}  {label}  ({secs:.2f} s)")
    passed = sum(s == "PASS" for _, s, _ in _CRITERIA)
    terminalreporter.write_line(f"{passed}/{len(_CRITERIA)} criteria passed")
