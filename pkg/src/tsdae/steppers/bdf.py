"""Variable-step BDF of orders 1 to 6."""

from __future__ import annotations

from collections import deque

import numpy as np

from ..core import EquationKind, ProblemError
from ..tableaux import bdf_coefficients
from .base import StageData, Stepper, StepOutcome
from .theta import extrapolation_error, lagrange_eval


class BDFStepper(Stepper):
    """BDF on the actual step history.

    The order ramps from 1 by one per accepted step (order ``k`` needs ``k+1``
    stored points so that a degree-``k`` predictor gives the error estimate).
    ``starter`` optionally names a one-step stepper used for the first
    ``order`` steps instead of the ramp; fixed-step order studies need it.
    """

    family = "bdf"

    def __init__(self, problem, order: int, starter: Stepper | None = None, **kw):
        if not 1 <= int(order) <= 6:
            raise ProblemError(f"BDF order must be between 1 and 6, got {order}")
        order = int(order)
        super().__init__(problem, f"bdf{order}", order, None, **kw)
        self.starter = starter
        self._hist: deque = deque(maxlen=order + 1)

    @property
    def has_error_estimate(self) -> bool:
        return True

    def control_order(self, outcome=None) -> int:
        if outcome is not None and outcome.order is not None:
            return outcome.order
        return self.order

    def _points(self, t, u):
        if self._hist and self._hist[0][0] == t and np.array_equal(self._hist[0][1], u):
            return list(self._hist)
        self._hist.clear()
        return [(t, u)]

    def _step(self, t, u, dt):
        pts = self._points(t, u)
        t1 = t + dt
        if self.starter is not None and len(pts) < self.order + 1:
            out = self.starter.step(t, u, dt)
            self._merge_counters()
            out.order = self.starter.control_order(out)
            out.stage_data.extra["starter"] = True
            return out
        k = max(1, min(self.order, len(pts) - 1))
        ts = np.array([t1] + [q[0] for q in pts[:k]])
        alpha = bdf_coefficients(ts)
        # written relative to u (the weights sum to zero) so that a constant
        # history gives u' = 0 without rounding residue
        hist_part = sum(alpha[j + 1] * (pts[j][1] - u) for j in range(1, k)) - alpha[0] * u
        shift = alpha[0]
        p = self.problem
        has_g = p.rhsfunction is not None

        def residual(y):
            r = self.F(t1, y, shift * y + hist_part)
            return r - self.G(t1, y) if has_g else r

        def jacobian(y):
            return self.jac(t1, y, shift * y + hist_part, shift)

        # predictor: degree-k extrapolation when possible
        npred = min(k, len(pts) - 1)
        pred = None
        if npred >= 1:
            pred = u + lagrange_eval(np.array([q[0] for q in pts[: npred + 1]]),
                                     np.array([q[1] - u for q in pts[: npred + 1]]), t1)
        elif p.equation_kind is not EquationKind.DAE:
            pred = u + dt * self.rhs(t, u)
        guess = pred if pred is not None else u.copy()
        y, rep = self.newton_solve(residual, jacobian, guess, t1)
        err = None
        order = k
        if len(pts) >= k + 1:
            err = extrapolation_error([q[0] for q in pts], [q[1] for q in pts], t1, y, k)
        elif pred is not None:
            # first step: compare with the explicit Euler predictor
            err = 0.5 * (y - pred)
            order = 1
        sd = StageData(t, dt, u.copy(), y, None, None,
                       {"nodes": ts, "values": np.array([y] + [q[1] for q in pts[:k]])})
        return StepOutcome(y, err, sd, rep.iterations, rep.linear_solves, [rep], order=order)

    def _merge_counters(self):
        sc = self.starter.counters
        for key, val in sc.as_dict().items():
            if key != "steps":
                setattr(self.counters, key, getattr(self.counters, key) + val)
                setattr(sc, key, 0)

    def _dense(self, outcome, theta):
        sd = outcome.stage_data
        if sd.extra.get("starter"):
            return self.starter._dense(outcome, theta)
        nodes, values = sd.extra["nodes"], sd.extra["values"]
        return sd.u0 + lagrange_eval(nodes, values - sd.u0, sd.t + theta * sd.dt)

    def accept(self, outcome):
        super().accept(outcome)
        sd = outcome.stage_data
        if not self._hist or self._hist[0][0] != sd.t:
            self._hist.clear()
            self._hist.appendleft((sd.t, sd.u0))
        self._hist.appendleft((sd.t + sd.dt, outcome.u_new))
        if self.starter is not None and sd.extra.get("starter"):
            self.starter.accept(outcome)

    def reset(self):
        self._hist.clear()
        if self.starter is not None:
            self.starter.reset()


def bdf_step(p, order: int, state) -> StepOutcome:
    """Single BDF step driven by ``state.bdf_history`` (newest first)."""
    st = BDFStepper(p, order)
    for tq, uq in reversed(list(state.bdf_history)):
        st._hist.appendleft((tq, np.asarray(uq, dtype=float)))
    out = st.step(state.t, state.u, state.dt)
    state.counters.nonlinear_iters += out.nonlinear_iters
    state.counters.linear_iters += out.linear_iters
    return out
