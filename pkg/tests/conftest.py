import numpy as np
import pytest

from zipimpute.simulation import corn_panel


def draw_zip(rng, X, Z, beta, gamma):
    """Draw ZIP responses for design rows ``X``/``Z``."""
    lam = np.exp(X @ beta)
    pi = 1.0 / (1.0 + np.exp(-(Z @ gamma)))
    y = rng.poisson(lam).astype(float)
    y[rng.random(y.size) < pi] = 0.0
    return y


def design(rng, n, p):
    """Intercept plus ``p - 1`` standard-normal columns."""
    return np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])


def central_gradient(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def central_hessian(f, theta, h=1e-4):
    k = theta.size
    H = np.zeros((k, k))
    for a in range(k):
        for b in range(k):
            ea = np.zeros(k)
            eb = np.zeros(k)
            ea[a] = h
            eb[b] = h
            H[a, b] = (f(theta + ea + eb) - f(theta + ea - eb)
                       - f(theta - ea + eb) + f(theta - ea - eb)) / (4 * h * h)
    return 0.5 * (H + H.T)


@pytest.fixture(scope="session")
def corn():
    return corn_panel(time_trend=True)


# one line per acceptance criterion, shown at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
