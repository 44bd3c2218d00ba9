import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion (tests named test_aNN_*)."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "location", ("", "", ""))[2]
            if "test_acceptance" in rep.nodeid and name.startswith("test_a"):
                crit = name.split("_")[1].upper()
                lines.append((crit, "PASS" if outcome == "passed" else "FAIL", name))
    if lines:
        terminalreporter.section("acceptance criteria")
        for crit, status, name in sorted(lines):
            terminalreporter.write_line(f"{crit} {status}  ({name})")
