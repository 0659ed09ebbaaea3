import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("kdsm", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("kdsm")


def fd_grad(fn, X, h=1e-5):
    """Central differences of a scalar-per-row function, shape (n, d)."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    out = np.empty((n, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[:, i] = (fn(X + e) - fn(X - e)) / (2 * h)
    return out


def fd_laplacian(fn, X, h=1e-4):
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    f0 = fn(X)
    out = np.zeros(n)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out += (fn(X + e) - 2 * f0 + fn(X - e)) / h**2
    return out


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record_acceptance(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[k] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
