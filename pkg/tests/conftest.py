import acceptance_log


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(acceptance_log.RESULTS, key=lambda k: int(k.split()[1])):
        terminalreporter.write_line(acceptance_log.RESULTS[key])
