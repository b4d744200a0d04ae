"""Explicit Runge-Kutta."""

from __future__ import annotations

import numpy as np

from ..core import EquationKind, ProblemError
from ..tableaux import ButcherTableau
from .base import StageData, Stepper, StepOutcome


class ERKStepper(Stepper):
    family = "rk"
    adjoint_supported = True

    def __init__(self, problem, tab: ButcherTableau, **kw):
        if not tab.explicit:
            raise ProblemError(f"{tab.name} is not an explicit tableau")
        if problem.equation_kind is EquationKind.DAE:
            raise ProblemError("explicit Runge-Kutta cannot integrate a DAE")
        super().__init__(problem, tab.name, tab.p, tab.p_hat if tab.b_hat is not None else None, **kw)
        self.tab = tab
        self.bstar = tab.bstar
        self._fsal: tuple | None = None

    def _step(self, t, u, dt):
        tab = self.tab
        s, n = tab.s, u.size
        A, b, c = tab.A, tab.b, tab.c
        Y = np.empty((s, n))
        K = np.empty((s, n))
        for i in range(s):
            Y[i] = u + dt * (A[i, :i] @ K[:i]) if i else u
            ti = t + c[i] * dt
            if i == 0 and self._fsal is not None and self._fsal[0] == t and np.array_equal(self._fsal[1], u):
                K[0] = self._fsal[2]
            else:
                K[i] = self.rhs(ti, Y[i])
        if tab.fsal:
            u1 = Y[-1].copy()
        else:
            u1 = u + dt * (b @ K)
        err = None
        if tab.b_hat is not None:
            err = dt * ((b - tab.b_hat) @ K)
        sd = StageData(t, dt, u.copy(), u1, Y, K)
        return StepOutcome(u1, err, sd)

    def accept(self, outcome):
        super().accept(outcome)
        if self.tab.fsal:
            sd = outcome.stage_data
            self._fsal = (sd.t + sd.dt, outcome.u_new, sd.K[-1])

    def reset(self):
        self._fsal = None

    def _first_stage_at_start(self):
        return True

    def _last_stage_at_end(self):
        return bool(self.tab.fsal)


def erk_step(p, tab: ButcherTableau, state) -> StepOutcome:
    st = ERKStepper(p, tab)
    out = st.step(state.t, state.u, state.dt)
    state.stage_slopes = out.stage_data.K
    state.counters.rhs_evals += st.counters.rhs_evals
    return out
