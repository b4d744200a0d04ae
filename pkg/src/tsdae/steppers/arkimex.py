"""Additive (IMEX) Runge-Kutta with a diagonally implicit stiff part."""

from __future__ import annotations

import numpy as np

from ..core import ProblemError
from ..tableaux import IMEXTableau
from .base import StageData, Stepper, StepOutcome, _poly


class ARKIMEXStepper(Stepper):
    """Stage ``i`` solves ``F(t_i, Y, (Y - Z_i)/(h a~_ii)) = 0`` with
    ``Z_i = u_n + h sum_j (a~_ij Y'_j + a_ij G(t_j, Y_j))``.

    With ``fully_implicit`` the whole of ``F - G`` is treated by the implicit
    tableau.  ``initial_guess`` is ``"extrapolate"`` (dense output of the
    previous step, when available) or ``"z"``.
    """

    family = "arkimex"

    def __init__(self, problem, tab: IMEXTableau, fully_implicit: bool = False,
                 initial_guess: str = "extrapolate", **kw):
        if initial_guess not in ("extrapolate", "z"):
            raise ProblemError(f"unknown initial guess {initial_guess!r}")
        p_hat = tab.p_hat if tab.has_embedded else None
        super().__init__(problem, tab.name, tab.p, p_hat, **kw)
        if np.any(np.diag(tab.implicit.A) < 0):
            raise ProblemError(f"{tab.name}: negative implicit diagonal")
        self.tab = tab
        self.fully_implicit = fully_implicit
        self.initial_guess = initial_guess
        self.bstar = tab.bstar
        self._prev: StepOutcome | None = None

    def _guess(self, ti, Z):
        prev = self._prev
        if self.initial_guess != "extrapolate" or prev is None or self.bstar is None:
            return Z.copy()
        sd = prev.stage_data
        theta = (ti - sd.t) / sd.dt
        return sd.u0 + sd.dt * (_poly(self.bstar, theta) @ sd.K)

    def _step(self, t, u, dt):
        E, I = self.tab.explicit, self.tab.implicit
        s, n = self.tab.s, u.size
        has_g = self.problem.rhsfunction is not None
        explicit_g = has_g and not self.fully_implicit
        Ydot = np.zeros((s, n))
        Gs = np.zeros((s, n))
        Y = np.empty((s, n))
        reports = []
        if self._prev is not None and self._prev.t_new != t:
            self._prev = None
        for i in range(s):
            ti = t + I.c[i] * dt
            Z = u + dt * (I.A[i, :i] @ Ydot[:i] + E.A[i, :i] @ Gs[:i]) if i else u.copy()
            aii = I.A[i, i]
            if aii != 0.0:
                sigma = 1.0 / (dt * aii)

                def residual(y, Z=Z, ti=ti, sigma=sigma):
                    r = self.F(ti, y, (y - Z) * sigma)
                    return r - self.G(ti, y) if self.fully_implicit and has_g else r

                def jacobian(y, Z=Z, ti=ti, sigma=sigma):
                    return self.jac(ti, y, (y - Z) * sigma, sigma, with_g=self.fully_implicit)

                Y[i], rep = self.newton_solve(residual, jacobian, self._guess(ti, Z), ti)
                reports.append(rep)
                Ydot[i] = (Y[i] - Z) * sigma
            else:
                Y[i] = Z
                g = self.G(ti, Z) if (self.fully_implicit and has_g) else np.zeros(n)
                Ydot[i] = self.slope_from_residual(ti, Z, g)
            if explicit_g:
                Gs[i] = self.G(ti, Y[i])
        u1 = u + dt * (I.b @ Ydot + E.b @ Gs)
        err = None
        if self.embedded_order is not None:
            err = dt * ((I.b - I.b_hat) @ Ydot + (E.b - E.b_hat) @ Gs)
        sd = StageData(t, dt, u.copy(), u1, Y, Ydot + Gs)
        return StepOutcome(
            u1, err, sd,
            sum(r.iterations for r in reports), sum(r.linear_solves for r in reports), reports,
        )

    def accept(self, outcome):
        super().accept(outcome)
        self._prev = outcome

    def reset(self):
        self._prev = None

    def _first_stage_at_start(self):
        return self.tab.implicit.A[0, 0] == 0.0

    def _last_stage_at_end(self):
        I = self.tab.implicit
        return bool(I.c[-1] == 1.0)
