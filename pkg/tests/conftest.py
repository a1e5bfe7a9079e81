import numpy as np
import pytest

from mlmcmc.covariance import MaternParams
from mlmcmc.grid import RectGrid


@pytest.fixture
def matern():
    return MaternParams(sigma2=1.0, lam=0.5, nu=1.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return RectGrid(16, 4)


# acceptance results, one entry per (criterion, part), printed at the end of the session
ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    def record(number: int, part: str, passed: bool, detail: str = ""):
        ACCEPTANCE[(number, part)] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted({k[0] for k in ACCEPTANCE}):
        parts = [(p, *ACCEPTANCE[(n, p)]) for (m, p) in sorted(ACCEPTANCE) if m == n]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{p}: {'ok' if good else 'FAIL'} {d}".rstrip() for p, good, d in parts)
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
