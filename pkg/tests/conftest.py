from . import _acceptance_log


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance_log.RESULTS):
        ok, name, detail = _acceptance_log.RESULTS[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
