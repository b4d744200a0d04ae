import numpy as np
import pytest

from tsdae.core import make_problem


def scalar_linear(a: float):
    """u' = a u as an explicit (nonstiff) problem."""
    return make_problem("nonstiff", {"g": lambda t, u: a * u, "g_jac": lambda t, u: np.array([[a]])},
                        dim=1)


def scalar_stiff(a: float):
    """u' = a u written implicitly (F = u' - a u)."""
    return make_problem("stiff", {"h": lambda t, u: a * u, "h_jac": lambda t, u: np.array([[a]])},
                        dim=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
