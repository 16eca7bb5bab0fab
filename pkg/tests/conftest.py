import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shadowpos.config import load_config
from shadowpos.pipeline import ControlParams

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


def fd_jacobian(f, x, h=1e-6):
    """Central differences of a vector-valued f; one column per entry of x."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2.0 * h))
    return np.array(cols).T


def rel_err(J, N):
    return float(np.max(np.abs(np.atleast_2d(J) - np.atleast_2d(N))) / max(np.max(np.abs(N)), 1e-6))


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def params(cfg):
    return ControlParams.from_dict(cfg.control)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; all lines are repeated in the terminal summary."""
    def emit(number, name, ok, detail):
        line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
