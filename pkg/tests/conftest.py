import numpy as np
import pytest


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(0.0, np.log(cond), n))
    M = (Q * w) @ Q.T
    return 0.5 * (M + M.T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


ACCEPTANCE_LINES = []


def record_criterion(label, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
