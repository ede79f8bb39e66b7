import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


class _Acceptance:
    def check(self, n, name, ok, detail):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {name} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    def skip(self, n, name, reason):
        line = f"criterion {n:>2} SKIP: {name} | {reason}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        pytest.skip(reason)


@pytest.fixture
def acceptance():
    return _Acceptance()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
