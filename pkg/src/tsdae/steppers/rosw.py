"""Linearly implicit Rosenbrock-W methods."""

from __future__ import annotations

import numpy as np

from ..core import ProblemError, udot_jacobian
from ..linalg import SQRT_EPS, lu_factor, lu_solve
from ..tableaux import RosTableau
from .base import StageData, Stepper, StepOutcome


class RosWStepper(Stepper):
    """Stage equations in transformed variables ``v = Gamma k``::

        (F_u'/(gamma_ii h) + F_u - G_u) v_i
            = -(F(t_i, Y_i, Zdot_i) - G(t_i, Y_i)) - gamma_i h R_t

    with ``Y_i = u_n + sum omega_ij v_j``, ``Zdot_i = -sum d_ij v_j / h`` and
    ``R_t`` a forward difference in t of ``F - G``.  The Jacobian is taken at
    ``(t_n, u_n)``; ``jacobian="zero"`` drops ``F_u - G_u`` (W-methods only
    keep their order in that case) and ``reuse_jacobian`` keeps it across
    accepted steps.  Tableaux with explicit stages use the untransformed
    slopes.
    """

    family = "rosw"

    def __init__(self, problem, tab: RosTableau, reuse_jacobian: bool = False,
                 jacobian: str = "exact", **kw):
        if jacobian not in ("exact", "zero"):
            raise ProblemError(f"unknown jacobian mode {jacobian!r}")
        if reuse_jacobian and not tab.w_method:
            raise ProblemError(f"{tab.name} is not a W-method; it cannot reuse a stale Jacobian")
        super().__init__(problem, tab.name, tab.p, tab.p_hat if tab.b_hat is not None else None, **kw)
        self.tab = tab
        self.reuse_jacobian = reuse_jacobian
        self.jacobian_mode = jacobian
        self._J = None

    def _jacobians(self, t, u):
        n = self.problem.dim
        zero = np.zeros(n)
        if self.jacobian_mode == "zero":
            J0 = np.zeros((n, n))
        elif self.reuse_jacobian and self._J is not None:
            J0 = self._J
        else:
            J0 = self.jac(t, u, zero, 0.0)
            self._J = J0
        return J0, udot_jacobian(self.problem, t, u, zero)

    def _residual(self, t, y, ydot):
        r = self.F(t, y, ydot)
        if self.problem.rhsfunction is not None:
            r = r - self.G(t, y)
        return r

    def _step(self, t, u, dt):
        tab = self.tab
        n, s = u.size, tab.s
        J0, Fud = self._jacobians(t, u)
        zero = np.zeros(n)
        r0 = self._residual(t, u, zero)
        delta = SQRT_EPS * max(abs(t), dt, 1.0)
        Rt = (self._residual(t + delta, u, zero) - r0) / delta
        if tab.has_explicit_stages:
            return self._kform(t, u, dt, J0, Fud, r0, Rt)
        factors: dict[float, object] = {}
        V = np.zeros((s, n))
        Y = np.empty((s, n))
        c = tab.c
        for i in range(s):
            gii = tab.Gamma[i, i]
            if gii not in factors:
                factors[gii] = lu_factor(Fud / (gii * dt) + J0)
            Y[i] = u + tab.omega[i, :i] @ V[:i] if i else u
            if i == 0:
                ri = r0
            else:
                ri = self._residual(t + c[i] * dt, Y[i], -(tab.d[i, :i] @ V[:i]) / dt)
            V[i] = lu_solve(factors[gii], -ri - tab.gamma_sums[i] * dt * Rt)
        self.counters.linear_iters += s
        u1 = u + tab.m @ V
        err = None if tab.m_hat is None else (tab.m - tab.m_hat) @ V
        sd = StageData(t, dt, u.copy(), u1, Y, None, {"V": V})
        return StepOutcome(u1, err, sd, 0, s)

    def _kform(self, t, u, dt, J0, Fud, r0, Rt):
        tab = self.tab
        n, s = u.size, tab.s
        Kk = np.zeros((s, n))
        Y = np.empty((s, n))
        zero = np.zeros(n)
        factors: dict[float, object] = {}
        for i in range(s):
            gii = tab.Gamma[i, i]
            if gii not in factors:
                factors[gii] = lu_factor(Fud + dt * gii * J0)
            Y[i] = u + tab.A[i, :i] @ Kk[:i] if i else u
            ri = r0 if i == 0 else self._residual(t + tab.c[i] * dt, Y[i], zero)
            rhs = -dt * ri - dt * (J0 @ (tab.Gamma[i, :i] @ Kk[:i])) - tab.gamma_sums[i] * dt * dt * Rt
            Kk[i] = lu_solve(factors[gii], rhs)
        self.counters.linear_iters += s
        u1 = u + tab.b @ Kk
        err = None if tab.b_hat is None else (tab.b - tab.b_hat) @ Kk
        sd = StageData(t, dt, u.copy(), u1, Y, None, {"k": Kk})
        return StepOutcome(u1, err, sd, 0, s)

    def reject(self, outcome):
        self._J = None

    def reset(self):
        self._J = None


def rosw_step(p, tab: RosTableau, state, reuse_jacobian: bool = False) -> StepOutcome:
    st = RosWStepper(p, tab, reuse_jacobian=reuse_jacobian)
    out = st.step(state.t, state.u, state.dt)
    state.counters.linear_iters += st.counters.linear_iters
    state.counters.rhs_evals += st.counters.rhs_evals
    return out
