"""Newton iteration for implicit stage equations."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import NonFiniteError
from .linalg import SingularMatrixError, lu_factor, lu_solve


class Reason(enum.Enum):
    ABS_TOL = "AbsTol"
    REL_TOL = "RelTol"
    STEP_TOL = "StepTol"
    MAX_IT = "MaxIt"
    LINEAR_FAILURE = "LinearFailure"
    NON_FINITE = "NonFinite"

    @property
    def converged(self) -> bool:
        return self in (Reason.ABS_TOL, Reason.REL_TOL, Reason.STEP_TOL)


@dataclass(frozen=True)
class NewtonOptions:
    max_it: int = 10
    abs_tol: float | None = None  # None: 1e-12 * sqrt(n)
    rel_tol: float = 1e-8
    step_tol: float = 1e-12
    damping: str | None = None  # None or "armijo"

    def __post_init__(self):
        if self.max_it < 1:
            raise ValueError("max_it must be >= 1")
        if min(self.abs_tol or 0.0, self.rel_tol, self.step_tol) < 0:
            raise ValueError("tolerances must be non-negative")
        if self.damping not in (None, "armijo"):
            raise ValueError(f"unknown damping {self.damping!r}")


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    final_residual_norm: float
    reason: Reason
    linear_solves: int = 0
    history: list[float] = field(default_factory=list)


def _finite(r) -> bool:
    return bool(np.all(np.isfinite(r)))


def newton_solve(residual, jacobian, x0, opts: NewtonOptions | None = None):
    """Solve ``residual(x) = 0``; returns ``(x, NewtonReport)``.

    Failures are reported, not raised, so the caller can reject the step.
    """
    opts = opts or NewtonOptions()
    x = np.array(x0, dtype=float)
    n = x.size
    abs_tol = opts.abs_tol if opts.abs_tol is not None else 1e-12 * np.sqrt(n)

    def evaluate(v):
        try:
            r = np.asarray(residual(v), dtype=float)
        except NonFiniteError:
            return None
        return r if _finite(r) else None

    r = evaluate(x)
    if r is None:
        return x, NewtonReport(False, 0, np.inf, Reason.NON_FINITE)
    rnorm = float(np.linalg.norm(r))
    hist = [rnorm]
    target = max(abs_tol, opts.rel_tol * rnorm)
    if rnorm <= abs_tol:
        return x, NewtonReport(True, 0, rnorm, Reason.ABS_TOL, 0, hist)

    for it in range(1, opts.max_it + 1):
        try:
            J = jacobian(x)
            dx = -lu_solve(lu_factor(J), r)
        except SingularMatrixError:
            return x, NewtonReport(False, it - 1, rnorm, Reason.LINEAR_FAILURE, it - 1, hist)
        except NonFiniteError:
            return x, NewtonReport(False, it - 1, rnorm, Reason.NON_FINITE, it - 1, hist)

        lam = 1.0
        xn = x + dx
        rn = evaluate(xn)
        if opts.damping == "armijo":
            for _ in range(10):
                if rn is not None and np.linalg.norm(rn) <= (1 - 1e-4 * lam) * rnorm:
                    break
                lam *= 0.5
                xn = x + lam * dx
                rn = evaluate(xn)
        if rn is None:
            return xn, NewtonReport(False, it, np.inf, Reason.NON_FINITE, it, hist)
        x, r = xn, rn
        rnorm = float(np.linalg.norm(r))
        hist.append(rnorm)
        if rnorm <= abs_tol:
            return x, NewtonReport(True, it, rnorm, Reason.ABS_TOL, it, hist)
        if rnorm <= target:
            return x, NewtonReport(True, it, rnorm, Reason.REL_TOL, it, hist)
        # a vanishing relative step only counts when the residual did not grow,
        # otherwise a divergent iterate with huge |x| would pass
        if lam * np.linalg.norm(dx) <= opts.step_tol * np.linalg.norm(x) and rnorm <= hist[0]:
            return x, NewtonReport(True, it, rnorm, Reason.STEP_TOL, it, hist)
    return x, NewtonReport(False, opts.max_it, rnorm, Reason.MAX_IT, opts.max_it, hist)
