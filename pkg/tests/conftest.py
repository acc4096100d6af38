import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "repo", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def pytest_terminal_summary(terminalreporter):
    import criteria
    if criteria.LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(criteria.LINES):
            terminalreporter.write_line(criteria.LINES[n])
