import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Re-emit the acceptance one-liners after the run, capture or not."""
    for name, mod in sys.modules.items():
        if name.rsplit(".", 1)[-1] == "test_acceptance":
            lines = getattr(mod, "SUMMARY", [])
            if lines:
                terminalreporter.section("acceptance criteria")
                for line in lines:
                    terminalreporter.write_line(line)
            return
