import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_gradient(fun, x, step):
    """Central-difference gradient of a vectorised scalar field."""
    d = x.shape[-1]
    out = np.empty(x.shape)
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        out[..., j] = (fun(x + e) - fun(x - e)) / (2 * step)
    return out


ACCEPTANCE_LINES = []


def record_acceptance(label, ok, detail):
    """Log one acceptance line; shown in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
