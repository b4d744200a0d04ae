"""Checkpointed trajectories, discrete adjoints and forward sensitivities.

Both directions differentiate the discrete step map actually taken by the
explicit Runge-Kutta and theta steppers, so forward and adjoint results agree
to rounding and match finite differences of the discretization.

Binary spill format (all little-endian): a sequence of records, each
``int64 step_index, float64 t, int64 n`` followed by ``n`` float64 values.
"""

from __future__ import annotations

import hashlib
import struct
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ProblemError,
    ProblemSpec,
    SolveOptions,
    eval_param_jacobian,
    full_jacobian,
    udot_jacobian,
)
from .linalg import lu_factor, lu_solve
from .steppers.base import StageData, Stepper
from .steppers.erk import ERKStepper
from .steppers.theta import ThetaStepper


class TrajectoryError(ProblemError):
    pass


class ReplayDivergence(RuntimeError):
    """Recomputation did not reproduce the forward run bit for bit."""


class UnsupportedSchemeError(ProblemError):
    pass


# policies -----------------------------------------------------------------


@dataclass(frozen=True)
class StoreAll:
    pass


@dataclass(frozen=True)
class Binomial:
    max_checkpoints: int

    def __post_init__(self):
        if self.max_checkpoints < 1:
            raise ValueError("Binomial needs at least one checkpoint")


_HEADER = struct.Struct("<qdq")


def _digest(u: np.ndarray) -> bytes:
    return hashlib.blake2b(np.ascontiguousarray(u, dtype="<f8").tobytes(), digest_size=16).digest()


class Trajectory:
    """Forward-run record used by the backward sweep.

    ``StoreAll`` keeps every state with its stage data.  ``Binomial(c)``
    keeps at most ``c`` states: checkpoints sit on multiples of a stride that
    doubles whenever the budget would be exceeded, and missing steps are
    recomputed from the nearest earlier checkpoint with the recorded step
    sizes.  Times, step sizes and a digest of every state are always kept so
    that replays can be checked for determinism.
    """

    def __init__(self, policy: StoreAll | Binomial | None = None):
        self.policy = policy if policy is not None else StoreAll()
        self.times: list[float] = []
        self.dts: list[float] = []
        self._digests: list[bytes] = []
        self._store: dict[int, tuple[float, np.ndarray, StageData | None]] = {}
        self._stride = 1
        self.recomputed_steps = 0
        self.peak_checkpoints = 0

    def __len__(self) -> int:
        return len(self.times)

    @property
    def last_index(self) -> int:
        return len(self.times) - 1

    @property
    def checkpoints(self) -> list[int]:
        return sorted(self._store)

    def set(self, step_index: int, t: float, u, stage_data: StageData | None) -> None:
        if step_index != len(self.times):
            kind = "duplicate" if step_index < len(self.times) else "out-of-order"
            raise TrajectoryError(
                f"{kind} step index {step_index}; expected {len(self.times)}"
            )
        u = np.array(u, dtype=float, copy=True)
        self.times.append(float(t))
        self.dts.append(0.0 if stage_data is None else float(stage_data.dt))
        self._digests.append(_digest(u))
        if isinstance(self.policy, StoreAll):
            self._store[step_index] = (float(t), u, stage_data)
        else:
            if step_index % self._stride == 0:
                self._store[step_index] = (float(t), u, None)
            while len(self._store) > self.policy.max_checkpoints:
                self._stride *= 2
                self._store = {k: v for k, v in self._store.items() if k % self._stride == 0}
        self.peak_checkpoints = max(self.peak_checkpoints, len(self._store))

    def get(self, step_index: int, replayer: Callable | None = None):
        """``(t, u, stage_data)`` for ``step_index``; stage data belongs to the
        step that ended there (``None`` for index 0)."""
        if not 0 <= step_index < len(self.times):
            raise TrajectoryError(f"step {step_index} was not recorded (have 0..{self.last_index})")
        rec = self._store.get(step_index)
        if rec is not None and (step_index == 0 or rec[2] is not None):
            return rec[0], rec[1].copy(), rec[2]
        if replayer is None:
            raise TrajectoryError(f"step {step_index} needs recomputation but no replayer was given")
        start = max(k for k in self._store if k < step_index)
        t, u, _ = self._store[start]
        u = u.copy()
        sd = None
        for k in range(start + 1, step_index + 1):
            out = replayer(t, u, self.dts[k])
            self.recomputed_steps += 1
            sd = out.stage_data
            t, u = self.times[k], out.u_new
            if _digest(u) != self._digests[k]:
                raise ReplayDivergence(f"replayed state at step {k} differs from the forward run")
        return t, np.array(u, copy=True), sd

    # spill ------------------------------------------------------------------

    def spill(self, path) -> None:
        """Write the retained checkpoints in the binary record format."""
        with open(path, "wb") as fh:
            for k in sorted(self._store):
                t, u, _ = self._store[k]
                fh.write(_HEADER.pack(k, t, u.size))
                fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes())

    @staticmethod
    def read_spill(path) -> list[tuple[int, float, np.ndarray]]:
        data = Path(path).read_bytes()
        out = []
        pos = 0
        while pos < len(data):
            k, t, n = _HEADER.unpack_from(data, pos)
            pos += _HEADER.size
            u = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(float)
            pos += 8 * n
            out.append((k, t, u))
        return out


def trajectory_set(traj: Trajectory, step_index: int, t: float, u, stage_data) -> None:
    traj.set(step_index, t, u, stage_data)


def trajectory_get(traj: Trajectory, step_index: int, forward_replayer: Callable | None = None):
    return traj.get(step_index, forward_replayer)


# costs and states -----------------------------------------------------------


@dataclass
class CostIntegrand:
    """Running cost ``r(t, u)``; the integral of each component is added to
    the matching objective."""

    ncost: int
    r: Callable
    drdu: Callable
    drdp: Callable | None = None

    def value(self, t, u) -> np.ndarray:
        v = np.asarray(self.r(t, u), dtype=float).reshape(self.ncost)
        return v

    def du(self, t, u, n: int) -> np.ndarray:
        J = np.asarray(self.drdu(t, u), dtype=float)
        if J.shape != (self.ncost, n):
            raise ProblemError(f"drdu: expected shape ({self.ncost}, {n}), got {J.shape}")
        return J

    def dp(self, t, u, npar: int) -> np.ndarray:
        if self.drdp is None or npar == 0:
            return np.zeros((self.ncost, npar))
        J = np.asarray(self.drdp(t, u), dtype=float)
        if J.shape != (self.ncost, npar):
            raise ProblemError(f"drdp: expected shape ({self.ncost}, {npar}), got {J.shape}")
        return J


@dataclass
class AdjointState:
    """``lam[i]`` and ``mu[i]`` hold the sensitivities of objective ``i``."""

    lam: np.ndarray
    mu: np.ndarray | None = None
    quadrature: np.ndarray | None = None  # cost integral recomputed backward

    def __post_init__(self):
        self.lam = np.atleast_2d(np.array(self.lam, dtype=float))
        if self.mu is not None:
            self.mu = np.atleast_2d(np.array(self.mu, dtype=float))
            if self.mu.shape[0] != self.lam.shape[0]:
                raise ProblemError("lam and mu must describe the same number of objectives")

    @property
    def ncost(self) -> int:
        return self.lam.shape[0]


@dataclass
class ForwardSensitivity:
    S: np.ndarray
    quadrature_sensitivity: np.ndarray | None = None
    quadrature: np.ndarray | None = None
    with_params: bool = True
    history: list[np.ndarray] = field(default_factory=list, repr=False)


# step linearizations -----------------------------------------------------------


def _check_supported(stepper: Stepper) -> None:
    if not isinstance(stepper, (ERKStepper, ThetaStepper)):
        raise UnsupportedSchemeError(
            f"sensitivities are available for explicit Runge-Kutta and theta steppers, "
            f"not {stepper.family}:{stepper.name}"
        )


class _Linearization:
    """Products with ``f_u`` and ``f_p`` for ``u' = f(t, u, p)`` defined
    implicitly by ``F(t, u, u') = G(t, u)`` with F affine in u'."""

    def __init__(self, p: ProblemSpec, t: float, y, ydot):
        self.J = full_jacobian(p, t, y, ydot, 0.0)
        self.P = eval_param_jacobian(p, t, y)
        c = p.udot_coefficient
        self.M = None
        if not (isinstance(c, str) and c == "identity"):
            self.M = lu_factor(udot_jacobian(p, t, y, ydot))

    def fu(self, v):
        w = -(self.J @ v)
        return w if self.M is None else lu_solve(self.M, w)

    def fp(self):
        w = -self.P
        return w if self.M is None else lu_solve(self.M, w)

    def _mt(self, w):
        return w if self.M is None else lu_solve(self.M, w, transpose=True)

    def fu_T(self, w):
        return -(self.J.T @ self._mt(w))

    def fp_T(self, w):
        return -(self.P.T @ self._mt(w))


def _theta_parts(p: ProblemSpec, stepper: ThetaStepper, sd: StageData):
    th = stepper.theta
    h = sd.dt
    ts = sd.t + th * h
    sigma = 1.0 / (th * h)
    X, Xdot = sd.Y[0], sd.K[0]
    Js = full_jacobian(p, ts, X, Xdot, sigma)
    Fud = udot_jacobian(p, ts, X, Xdot)
    P = eval_param_jacobian(p, ts, X)
    return th, h, ts, sigma, X, Js, Fud, P


# adjoint ----------------------------------------------------------------------


def adjoint_solve(p: ProblemSpec, stepper: Stepper, traj: Trajectory, terminal: AdjointState,
                  integrand: CostIntegrand | None = None) -> AdjointState:
    """Backward sweep from the last recorded step to step 0.

    ``terminal`` holds ``dPhi/du`` (and ``dPhi/dp``) at the final time.  The
    result holds the gradients with respect to the initial state and the
    parameters, including the cost integral when ``integrand`` is given.
    """
    _check_supported(stepper)
    n, npar = p.dim, p.nparams
    if npar > 0 and p.param_jacobian is None:
        raise ProblemError(f"{p.name}: parameter Jacobian required for the adjoint")
    lam = np.array(terminal.lam, dtype=float)
    ncost = lam.shape[0]
    if lam.shape != (ncost, n):
        raise ProblemError(f"terminal lam must have shape (ncost, {n}), got {lam.shape}")
    if integrand is not None and integrand.ncost != ncost:
        raise ProblemError("integrand ncost does not match the number of objectives")
    mu = np.zeros((ncost, npar)) if terminal.mu is None else np.array(terminal.mu, dtype=float)
    if mu.shape != (ncost, npar):
        raise ProblemError(f"terminal mu must have shape ({ncost}, {npar}), got {mu.shape}")
    quad = np.zeros(ncost)

    stepper.reset()
    replay = stepper.step
    L = lam.T.copy()   # columns are objectives
    Mu = mu.T.copy()
    for k in range(traj.last_index, 0, -1):
        t_k, _, sd = traj.get(k, replay)
        _check_step(traj, k, sd)
        if isinstance(stepper, ERKStepper):
            L, Mu, q = _erk_adjoint_step(p, stepper, sd, L, Mu, integrand)
        else:
            L, Mu, q = _theta_adjoint_step(p, stepper, sd, L, Mu, integrand)
        quad += q
    return AdjointState(L.T, Mu.T if npar > 0 else None, quad if integrand is not None else None)


def _check_step(traj: Trajectory, k: int, sd: StageData) -> None:
    t_prev, t_k = traj.times[k - 1], traj.times[k]
    if sd.t != t_prev or abs(sd.t + sd.dt - t_k) > 4 * np.finfo(float).eps * max(abs(t_k), 1.0):
        raise UnsupportedSchemeError(
            f"step {k} was truncated or modified (events); adjoints through events are not supported"
        )


def _erk_adjoint_step(p, stepper, sd, L, Mu, integrand):
    tab = stepper.tab
    h = sd.dt
    s = tab.s
    n, npar = p.dim, p.nparams
    ncost = L.shape[1]
    Z = np.zeros((s, n, ncost))
    quad = np.zeros(ncost)
    for i in range(s - 1, -1, -1):
        ti = sd.t + tab.c[i] * h
        Yi = sd.Y[i]
        lin = _Linearization(p, ti, Yi, sd.K[i])
        W = h * tab.b[i] * L
        for j in range(i + 1, s):
            if tab.A[j, i] != 0.0:
                W = W + h * tab.A[j, i] * Z[j]
        Zi = lin.fu_T(W)
        if npar:
            Mu = Mu + lin.fp_T(W)
        if integrand is not None and tab.b[i] != 0.0:
            Zi = Zi + h * tab.b[i] * integrand.du(ti, Yi, n).T
            if npar:
                Mu = Mu + h * tab.b[i] * integrand.dp(ti, Yi, npar).T
            quad += h * tab.b[i] * integrand.value(ti, Yi)
        Z[i] = Zi
    return L + Z.sum(axis=0), Mu, quad


def _theta_adjoint_step(p, stepper, sd, L, Mu, integrand):
    th, h, ts, sigma, X, Js, Fud, P = _theta_parts(p, stepper, sd)
    n, npar = p.dim, p.nparams
    g = L / th
    quad = np.zeros(L.shape[1])
    if integrand is not None:
        g = g + h * integrand.du(ts, X, n).T
        quad = h * integrand.value(ts, X)
    y = lu_solve(lu_factor(Js), g, transpose=True)
    L_new = (1.0 - 1.0 / th) * L + sigma * (Fud.T @ y)
    if npar:
        Mu = Mu - P.T @ y
        if integrand is not None:
            Mu = Mu + h * integrand.dp(ts, X, npar).T
    return L_new, Mu, quad


# forward -----------------------------------------------------------------------


class _TangentHook:
    def __init__(self, p, stepper, S0, with_params, integrand, keep_history):
        self.p, self.st = p, stepper
        self.S = np.array(S0, dtype=float, copy=True)
        self.with_params = with_params
        self.integrand = integrand
        m = self.S.shape[1]
        nc = integrand.ncost if integrand is not None else 0
        self.qs = np.zeros((nc, m))
        self.q = np.zeros(nc)
        self.keep = keep_history
        self.history = [self.S.copy()] if keep_history else []

    def __call__(self, t, u, dt, out):
        sd = out.stage_data
        if isinstance(self.st, ERKStepper):
            self._erk(sd)
        else:
            self._theta(sd)
        if self.keep:
            self.history.append(self.S.copy())

    def _forcing(self, P_like):
        return P_like if self.with_params else 0.0

    def _quad(self, w, t, y, dY):
        it = self.integrand
        if it is None:
            return
        n, npar = self.p.dim, self.p.nparams
        self.q += w * it.value(t, y)
        self.qs += w * (it.du(t, y, n) @ dY)
        if self.with_params:
            self.qs += w * it.dp(t, y, npar)

    def _erk(self, sd):
        tab, p = self.st.tab, self.p
        h, s = sd.dt, tab.s
        dK = []
        for i in range(s):
            dY = self.S + h * sum(tab.A[i, j] * dK[j] for j in range(i) if tab.A[i, j] != 0.0)
            ti = sd.t + tab.c[i] * h
            lin = _Linearization(p, ti, sd.Y[i], sd.K[i])
            dKi = lin.fu(dY)
            if self.with_params:
                dKi = dKi + lin.fp()
            dK.append(dKi)
            if tab.b[i] != 0.0:
                self._quad(h * tab.b[i], ti, sd.Y[i], dY)
        self.S = self.S + h * sum(tab.b[i] * dK[i] for i in range(s))

    def _theta(self, sd):
        th, h, ts, sigma, X, Js, Fud, P = _theta_parts(self.p, self.st, sd)
        rhs = sigma * (Fud @ self.S)
        if self.with_params:
            rhs = rhs - P
        dX = lu_solve(lu_factor(Js), rhs)
        self.S = (1.0 - 1.0 / th) * self.S + dX / th
        self._quad(h, ts, X, dX)


def forward_solve(p: ProblemSpec, stepper: Stepper, u0, opts: SolveOptions, S0,
                  integrand: CostIntegrand | None = None, with_params: bool | None = None,
                  keep_history: bool = False, **solve_kw):
    """Integrate and propagate ``S = du/dtheta`` alongside.

    With ``with_params`` (the default when the problem has parameters) the
    columns of ``S0`` are ``du0/dp`` and the parameter forcing is included;
    otherwise ``S0`` seeds initial-condition directions.  Returns
    ``(SolveResult, ForwardSensitivity)``.
    """
    from .steppers.solve import solve

    _check_supported(stepper)
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    if S0.shape[0] != p.dim and S0.size == 0:
        S0 = S0.reshape(p.dim, 0)
    if with_params is None:
        with_params = p.nparams > 0
    if S0.shape[0] != p.dim:
        raise ProblemError(f"S0 must have {p.dim} rows, got shape {S0.shape}")
    if S0.shape[1] == 0:
        raise ProblemError("nothing to propagate: S0 has no columns")
    if with_params:
        if p.nparams == 0:
            raise ProblemError(f"{p.name} has no parameters")
        if S0.shape[1] != p.nparams:
            raise ProblemError(f"S0 needs one column per parameter ({p.nparams})")
        if p.param_jacobian is None:
            raise ProblemError(f"{p.name}: parameter Jacobian required for sensitivities")
    hook = _TangentHook(p, stepper, S0, with_params, integrand, keep_history)
    hooks = tuple(solve_kw.pop("hooks", ())) + (hook,)
    if solve_kw.get("events") is not None:
        raise UnsupportedSchemeError("sensitivities through events are not supported")
    res = solve(p, stepper, u0, opts, hooks=hooks, **solve_kw)
    fs = ForwardSensitivity(
        hook.S, hook.qs if integrand is not None else None,
        hook.q if integrand is not None else None, with_params, hook.history,
    )
    return res, fs


def total_derivative(phi_u, phi_p, S: ForwardSensitivity, cost_index: int = 0) -> np.ndarray:
    """``phi_u . S + phi_p`` plus the integrand contribution when present."""
    phi_u = np.asarray(phi_u, dtype=float)
    phi_p = np.asarray(phi_p, dtype=float)
    Sm = S.S
    if phi_u.shape != (Sm.shape[0],):
        raise ProblemError(f"phi_u must have shape ({Sm.shape[0]},), got {phi_u.shape}")
    if phi_p.shape != (Sm.shape[1],):
        raise ProblemError(f"phi_p must have shape ({Sm.shape[1]},), got {phi_p.shape}")
    out = phi_u @ Sm + phi_p
    if S.quadrature_sensitivity is not None:
        out = out + S.quadrature_sensitivity[cost_index]
    return out


class CostQuadrature:
    """Solve hook accumulating the cost integral with the stepper's own
    quadrature (stage weights for Runge-Kutta, the theta point otherwise)."""

    def __init__(self, stepper: Stepper, integrand: CostIntegrand):
        _check_supported(stepper)
        self.st, self.integrand = stepper, integrand
        self.q = np.zeros(integrand.ncost)

    def __call__(self, t, u, dt, out):
        sd = out.stage_data
        h = sd.dt
        if isinstance(self.st, ERKStepper):
            tab = self.st.tab
            for i in range(tab.s):
                if tab.b[i] != 0.0:
                    self.q += h * tab.b[i] * self.integrand.value(sd.t + tab.c[i] * h, sd.Y[i])
        else:
            self.q += h * self.integrand.value(sd.t + self.st.theta * h, sd.Y[0])
