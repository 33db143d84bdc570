import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from otsteer import GridDensity, GridSpec, LtvSystem, StackedCost, gramian

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_system(rng, n, m, tf, ltv=True):
    """A random controllable system; redraws until the Gramian is well conditioned."""
    while True:
        if ltv:
            A = [np.eye(n) + 0.4 * rng.standard_normal((n, n)) for _ in range(tf)]
            B = [rng.standard_normal((n, m)) for _ in range(tf)]
            sys = LtvSystem(A, B)
        else:
            sys = LtvSystem.lti(0.8 * rng.standard_normal((n, n)),
                                rng.standard_normal((n, m)), tf)
        g = gramian(sys)
        if g.controllable and g.min_eig > 1e-6 * g.max_eig:
            return sys


def random_cost(rng, n, m, tf):
    Q, R = [], []
    for _ in range(tf):
        L = rng.standard_normal((n, n))
        Q.append(L @ L.T / n)
        M = rng.standard_normal((m, m))
        R.append(M @ M.T / m + 0.5 * np.eye(m))
    return StackedCost(Q, R)


def random_suite(seed, count):
    """``count`` (system, cost) pairs with n in 1..4, m in 1..2, tf in n..12."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 3))
        tf = int(rng.integers(n, 13))
        out.append((random_system(rng, n, m, tf), random_cost(rng, n, m, tf)))
    return out


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0)))


def random_density(rng, grid, zeros=0):
    w = rng.random(grid.size) + 0.01
    if zeros:
        w[rng.choice(grid.size, zeros, replace=False)] = 0.0
    return GridDensity(grid, w / w.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def line_grid():
    return GridSpec((0.0,), (1.0,), (5,))


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def report(tag, ok, detail):
    line = f"{tag} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
