"""Shared stepper machinery: outcomes, counters, dense output."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..core import (
    EquationKind,
    ProblemError,
    ProblemSpec,
    StepFailure,
    eval_ifunction,
    eval_rhs,
    explicit_rhs,
    full_jacobian,
    udot_jacobian,
)
from ..linalg import lu_factor, lu_solve
from ..newton import NewtonOptions, NewtonReport, newton_solve


class NewtonFailure(StepFailure):
    def __init__(self, report: NewtonReport, t: float):
        self.report = report
        self.t = t
        super().__init__(f"stage solve failed at t={t!r}: {report.reason.value}")


@dataclass
class Counters:
    nonlinear_iters: int = 0
    linear_iters: int = 0
    rejected_steps: int = 0
    nonlinear_failures: int = 0
    rhs_evals: int = 0
    jac_evals: int = 0
    steps: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class StageData:
    t: float
    dt: float
    u0: np.ndarray
    u1: np.ndarray
    Y: np.ndarray | None = None  # stage values (s, n)
    K: np.ndarray | None = None  # total stage slopes (s, n)
    extra: dict = field(default_factory=dict)


@dataclass
class StepOutcome:
    u_new: np.ndarray
    err_estimate: np.ndarray | None
    stage_data: StageData
    nonlinear_iters: int = 0
    linear_iters: int = 0
    reports: list = field(default_factory=list)
    accepted: bool | None = None
    order: int | None = None  # order the estimate refers to (BDF ramps)

    @property
    def t(self) -> float:
        return self.stage_data.t

    @property
    def dt(self) -> float:
        return self.stage_data.dt

    @property
    def t_new(self) -> float:
        return self.stage_data.t + self.stage_data.dt


@dataclass
class StepperState:
    """Plain-data view of an integration in progress."""

    t: float
    u: np.ndarray
    dt: float
    step_index: int = 0
    stage_slopes: np.ndarray | None = None
    bdf_history: deque = field(default_factory=lambda: deque(maxlen=7))
    counters: Counters = field(default_factory=Counters)


def hermite(u0, f0, u1, f1, dt, theta):
    t2, t3 = theta * theta, theta * theta * theta
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + theta
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return h00 * u0 + h10 * dt * f0 + h01 * u1 + h11 * dt * f1


class Stepper:
    """Base class.  Subclasses implement :meth:`_step`."""

    family = "base"
    adjoint_supported = False

    def __init__(self, problem: ProblemSpec, name: str, order: int, embedded_order: int | None,
                 newton: NewtonOptions | None = None):
        self.problem = problem
        self.name = name
        self.order = order
        self.embedded_order = embedded_order
        self.newton = newton or NewtonOptions()
        self.counters = Counters()
        self.bstar = None

    # -- problem evaluation with bookkeeping ---------------------------------
    def F(self, t, u, udot):
        self.counters.rhs_evals += 1
        return eval_ifunction(self.problem, t, u, udot)

    def G(self, t, u):
        self.counters.rhs_evals += 1
        return eval_rhs(self.problem, t, u)

    def rhs(self, t, u):
        """Total derivative u' (ODEs only)."""
        self.counters.rhs_evals += 1
        return explicit_rhs(self.problem, t, u)

    def jac(self, t, u, udot, shift, with_g: bool = True):
        self.counters.jac_evals += 1
        if with_g:
            return full_jacobian(self.problem, t, u, udot, shift)
        from ..core import eval_ijacobian

        return eval_ijacobian(self.problem, t, u, udot, shift)

    def newton_solve(self, residual, jacobian, x0, t):
        x, rep = newton_solve(residual, jacobian, x0, self.newton)
        self.counters.nonlinear_iters += rep.iterations
        self.counters.linear_iters += rep.linear_solves
        if not rep.converged:
            self.counters.nonlinear_failures += 1
            raise NewtonFailure(rep, t)
        return x, rep

    def slope_from_residual(self, t, y, rhs_value):
        """Solve ``F_u' y' = rhs_value - F(t, y, 0)`` (F affine in u')."""
        p = self.problem
        if p.equation_kind is EquationKind.DAE:
            raise ProblemError(f"{self.name}: explicit stage is undefined for a DAE")
        zero = np.zeros(p.dim)
        r = rhs_value - self.F(t, y, zero)
        c = p.udot_coefficient
        if isinstance(c, str) and c == "identity":
            return r
        self.counters.linear_iters += 1
        return lu_solve(lu_factor(udot_jacobian(p, t, y, zero)), r)

    # -- interface -----------------------------------------------------------
    @property
    def has_error_estimate(self) -> bool:
        return self.embedded_order is not None

    def control_order(self, outcome: StepOutcome | None = None) -> int:
        if outcome is not None and outcome.order is not None:
            return outcome.order
        if self.embedded_order is None:
            return self.order
        return min(self.order, self.embedded_order)

    def step(self, t: float, u, dt: float) -> StepOutcome:
        if not dt > 0:
            raise ValueError("dt must be positive")
        u = np.asarray(u, dtype=float)
        return self._step(float(t), u, float(dt))

    def _step(self, t, u, dt) -> StepOutcome:  # pragma: no cover - abstract
        raise NotImplementedError

    def accept(self, outcome: StepOutcome) -> None:
        outcome.accepted = True
        self.counters.steps += 1

    def reject(self, outcome: StepOutcome) -> None:
        """Called when the controller rejects ``outcome``."""

    def reset(self) -> None:
        """Forget history (start of integration, after an event)."""

    # -- dense output --------------------------------------------------------
    def endpoint_slopes(self, outcome: StepOutcome):
        sd = outcome.stage_data
        if "slopes" in sd.extra:
            return sd.extra["slopes"]
        if self.problem.equation_kind is EquationKind.DAE:
            sd.extra["slopes"] = None
            return None
        f0 = f1 = None
        if sd.Y is not None and sd.K is not None:
            if np.array_equal(sd.Y[0], sd.u0) and self._first_stage_at_start():
                f0 = sd.K[0]
            if np.array_equal(sd.Y[-1], sd.u1) and self._last_stage_at_end():
                f1 = sd.K[-1]
        if f0 is None:
            f0 = self.rhs(sd.t, sd.u0)
        if f1 is None:
            f1 = self.rhs(sd.t + sd.dt, sd.u1)
        sd.extra["slopes"] = (f0, f1)
        return sd.extra["slopes"]

    def _first_stage_at_start(self) -> bool:
        return False

    def _last_stage_at_end(self) -> bool:
        return False

    def interpolate(self, outcome: StepOutcome, t_query: float) -> np.ndarray:
        """Dense output on (or, extrapolating, beyond) the step interval."""
        sd = outcome.stage_data
        if t_query == outcome.t_new:
            return outcome.u_new.copy()
        theta = (t_query - sd.t) / sd.dt
        if theta == 0.0:
            return sd.u0.copy()
        return self._dense(outcome, theta)

    def _dense(self, outcome: StepOutcome, theta: float) -> np.ndarray:
        sd = outcome.stage_data
        if self.bstar is not None and sd.K is not None:
            w = _poly(self.bstar, theta)
            return sd.u0 + sd.dt * (w @ sd.K)
        slopes = self.endpoint_slopes(outcome)
        if slopes is None:
            return sd.u0 + theta * (sd.u1 - sd.u0)
        return hermite(sd.u0, slopes[0], sd.u1, slopes[1], sd.dt, theta)

    def describe(self) -> dict:
        return {"family": self.family, "name": self.name, "order": self.order,
                "embedded_order": self.embedded_order}


def _poly(bstar: np.ndarray, theta: float) -> np.ndarray:
    return bstar @ (theta ** np.arange(1, bstar.shape[1] + 1))
