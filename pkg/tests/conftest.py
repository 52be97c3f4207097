import numpy as np
import pytest

from laplace_audit import fit_laplace, generate_logistic_data, logistic_target


def fd_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jac(f, x, h=1e-5):
    """Central-difference Jacobian of a vector function, columns by coordinate."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def within_se(value, target, se, k=3.0):
    return abs(value - target) <= k * se


@pytest.fixture(scope="session")
def logistic_10_100():
    data = generate_logistic_data(100, 10, 7)
    target = logistic_target(data)
    lap, st = fit_laplace(target, init=np.full(10, 1 / np.sqrt(10)))
    return data, target, lap, st


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
