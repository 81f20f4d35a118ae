"""Prints a one-line verdict per acceptance criterion at the end of the session."""

_verdicts: dict[int, tuple[str, str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    n = props["criterion"]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _verdicts[n] = (status, str(props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance")
    for n in sorted(_verdicts):
        status, detail = _verdicts[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}".rstrip())
