import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    The line is printed immediately and repeated in the terminal summary, so
    it is visible even when pytest captures output.
    """
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(label, checks):
        ok = all(passed for passed, _ in checks.values())
        parts = "; ".join(f"{k} {'ok' if p else 'FAILED'} ({d})" for k, (p, d) in checks.items())
        line = f"{'PASS' if ok else 'FAIL'} {label}: {parts}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
