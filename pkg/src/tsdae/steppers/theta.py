"""One-leg theta methods (backward Euler, implicit midpoint, general theta)."""

from __future__ import annotations

from collections import deque

import numpy as np

from ..core import ProblemError
from .base import StageData, Stepper, StepOutcome


def extrapolation_error(times, values, t_new: float, u_new, order: int):
    """Local error estimate ``h/(t_{n+1} - t_{n-k}) * (u_{n+1} - u_pred)`` with
    ``u_pred`` the degree-k polynomial through the k+1 most recent points."""
    k = order
    ts = np.asarray(times[: k + 1], dtype=float)
    us = np.asarray(values[: k + 1], dtype=float)
    pred = lagrange_eval(ts, us, t_new)
    h = t_new - ts[0]
    return (h / (t_new - ts[-1])) * (u_new - pred)


def lagrange_eval(ts, us, t: float) -> np.ndarray:
    out = np.zeros(us.shape[1:])
    for j in range(len(ts)):
        w = 1.0
        for m in range(len(ts)):
            if m != j:
                w *= (t - ts[m]) / (ts[j] - ts[m])
        out = out + w * us[j]
    return out


class ThetaStepper(Stepper):
    """Solve ``F(t + theta h, X, (X - u_n)/(theta h)) = G(t + theta h, X)`` and
    set ``u_{n+1} = u_n + (X - u_n)/theta``.

    The step has no embedded pair; for adaptive runs the error is estimated
    by comparing with polynomial extrapolation of accepted points.
    """

    family = "theta"
    adjoint_supported = True

    def __init__(self, problem, theta: float = 0.5, name: str | None = None, **kw):
        if not 0.0 < theta <= 1.0:
            raise ProblemError("theta must lie in (0, 1]")
        self.theta = float(theta)
        p = 2 if self.theta == 0.5 else 1
        super().__init__(problem, name or f"theta({theta:g})", p, None, **kw)
        self._hist: deque = deque(maxlen=p + 1)

    @property
    def has_error_estimate(self) -> bool:
        return True

    def control_order(self, outcome=None) -> int:
        return self.order

    def _step(self, t, u, dt):
        th = self.theta
        ts = t + th * dt
        sigma = 1.0 / (th * dt)
        p = self.problem
        has_g = p.rhsfunction is not None

        def residual(x):
            r = self.F(ts, x, (x - u) * sigma)
            return r - self.G(ts, x) if has_g else r

        def jacobian(x):
            return self.jac(ts, x, (x - u) * sigma, sigma)

        X, rep = self.newton_solve(residual, jacobian, u.copy(), ts)
        u1 = X if th == 1.0 else u + (X - u) / th
        Xdot = (X - u) * sigma
        sd = StageData(t, dt, u.copy(), u1, X[None, :], Xdot[None, :])
        out = StepOutcome(u1, None, sd, rep.iterations, rep.linear_solves, [rep])
        pts = list(self._hist) if self._hist and self._hist[0][0] == t else [(t, u)]
        k = min(self.order, len(pts) - 1)
        if k >= 1:
            out.err_estimate = extrapolation_error(
                [q[0] for q in pts], [q[1] for q in pts], t + dt, u1, k
            )
            out.order = k
        return out

    def accept(self, outcome):
        super().accept(outcome)
        sd = outcome.stage_data
        if not self._hist or self._hist[0][0] != sd.t:
            self._hist.clear()
            self._hist.appendleft((sd.t, sd.u0))
        self._hist.appendleft((sd.t + sd.dt, outcome.u_new))

    def reset(self):
        self._hist.clear()
