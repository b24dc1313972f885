import sys


def pytest_terminal_summary(terminalreporter):
    # the acceptance module may be imported under different names depending on rootdir handling
    results = {}
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            results.update(getattr(mod, "RESULTS", {}))
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        terminalreporter.write_line(results[num])
