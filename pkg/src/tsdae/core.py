"""Problem definitions in implicit form ``F(t, u, u') = G(t, u)``.

``F`` is the (possibly stiff, possibly implicit) residual, ``G`` an optional
explicit right-hand side.  The shifted-Jacobian contract mirrors what implicit
steppers need: ``ijacobian(t, u, u', shift) = shift * dF/du' + dF/du``.
"""

from __future__ import annotations

import enum
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, replace

import numpy as np


class StepFailure(RuntimeError):
    """A recoverable failure inside a step; the controller may retry smaller."""


class NonFiniteError(StepFailure):
    def __init__(self, where: str, index: int, value: float):
        self.where = where
        self.index = int(index)
        self.value = value
        super().__init__(f"non-finite value {value!r} in {where} at index {index}")


class ProblemError(ValueError):
    """Ill-formed problem definition (configuration error)."""


class SingularMassError(ProblemError):
    pass


class EquationKind(enum.Enum):
    EXPLICIT_ODE = "ExplicitODE"
    IMPLICIT_ODE = "ImplicitODE"
    DAE = "DAE"


class FormKind(enum.Enum):
    NONSTIFF = "nonstiff"
    STIFF = "stiff"
    STIFF_MASS = "stiff-mass"
    NONSTIFF_MASS = "nonstiff-mass"
    SPLIT = "split"
    SPLIT_MASS = "split-mass"
    IMPLICIT = "implicit"


class FinalTimePolicy(enum.Enum):
    STEPOVER = "stepover"
    INTERPOLATE = "interpolate"
    MATCHSTEP = "matchstep"


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = np.flatnonzero(~np.isfinite(np.ravel(x)))[0]
        raise NonFiniteError(where, bad, np.ravel(x)[bad])
    return x


@dataclass(frozen=True)
class ProblemSpec:
    """An ODE/DAE in the form ``F(t, u, u') = G(t, u)``.

    ``param_jacobian`` returns the n-by-np derivative of the residual
    ``F - G`` with respect to the parameters.  ``udot_coefficient`` records
    ``dF/du'`` when it is known to be constant: ``"identity"``, a matrix, or
    ``None`` (unknown, evaluated on demand).
    """

    dim: int
    ifunction: Callable | None = None
    rhsfunction: Callable | None = None
    ijacobian: Callable | None = None
    rhsjacobian: Callable | None = None
    param_jacobian: Callable | None = None
    nparams: int = 0
    equation_kind: EquationKind = EquationKind.IMPLICIT_ODE
    udot_coefficient: object = None
    name: str = "problem"
    algebraic: tuple[int, ...] = ()

    def __post_init__(self):
        if self.dim < 1:
            raise ProblemError("dimension must be positive")
        if self.ifunction is None and self.rhsfunction is None:
            raise ProblemError("need at least one of ifunction / rhsfunction")
        if self.equation_kind is EquationKind.DAE and self.ifunction is None:
            raise ProblemError("a DAE needs an ifunction")
        if self.nparams < 0:
            raise ProblemError("nparams must be >= 0")
        if self.ifunction is None:
            object.__setattr__(self, "udot_coefficient", "identity")
            if self.equation_kind is EquationKind.IMPLICIT_ODE:
                object.__setattr__(self, "equation_kind", EquationKind.EXPLICIT_ODE)

    @property
    def has_rhs(self) -> bool:
        return self.rhsfunction is not None

    def with_(self, **kw) -> "ProblemSpec":
        return replace(self, **kw)


@dataclass(frozen=True)
class ToleranceSpec:
    atol: float | np.ndarray = 1e-6
    rtol: float = 1e-6

    def __post_init__(self):
        a = np.asarray(self.atol, dtype=float)
        if np.any(a < 0) or self.rtol < 0:
            raise ProblemError("tolerances must be non-negative")
        if np.all(a == 0) and self.rtol == 0:
            raise ProblemError("atol and rtol cannot both be zero")


@dataclass
class SolveOptions:
    t0: float = 0.0
    dt0: float = 0.1
    max_steps: int = 1000
    max_time: float = 1.0
    final_time_policy: FinalTimePolicy = FinalTimePolicy.STEPOVER
    max_nonlinear_failures: int | None = None  # None: unlimited
    max_rejections: int | None = None
    dt_min: float = 0.0

    def __post_init__(self):
        if isinstance(self.final_time_policy, str):
            self.final_time_policy = FinalTimePolicy(self.final_time_policy.lower())
        if not self.dt0 > 0:
            raise ProblemError("dt0 must be positive")
        if self.max_steps < 1:
            raise ProblemError("max_steps must be >= 1")
        if not self.max_time > self.t0:
            raise ProblemError("max_time must exceed t0")


# ---------------------------------------------------------------------------
# evaluation


def _as_state(x, n: int, where: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ProblemError(f"{where}: expected shape ({n},), got {x.shape}")
    return check_finite(x, where)


def eval_ifunction(p: ProblemSpec, t: float, u, udot) -> np.ndarray:
    """Residual ``F(t, u, u')``; defaults to ``u'`` when only G is given."""
    if p.ifunction is None:
        return _as_state(np.array(udot, dtype=float, copy=True), p.dim, "ifunction")
    return _as_state(p.ifunction(t, u, udot), p.dim, "ifunction")


def eval_rhs(p: ProblemSpec, t: float, u) -> np.ndarray:
    if p.rhsfunction is None:
        raise ProblemError(f"{p.name}: no rhsfunction")
    return _as_state(p.rhsfunction(t, u), p.dim, "rhsfunction")


def eval_rhs_or_zero(p: ProblemSpec, t: float, u) -> np.ndarray:
    return eval_rhs(p, t, u) if p.rhsfunction is not None else np.zeros(p.dim)


def _as_matrix(J, n: int, m: int, where: str) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    if J.shape != (n, m):
        raise ProblemError(f"{where}: expected shape ({n}, {m}), got {J.shape}")
    return check_finite(J, where)


def udot_jacobian(p: ProblemSpec, t: float, u, udot) -> np.ndarray:
    """``dF/du'``."""
    c = p.udot_coefficient
    if isinstance(c, str) and c == "identity":
        return np.eye(p.dim)
    if c is not None:
        return np.array(c, dtype=float)
    if p.ijacobian is not None:
        return _as_matrix(p.ijacobian(t, u, udot, 1.0), p.dim, p.dim, "ijacobian") - _as_matrix(
            p.ijacobian(t, u, udot, 0.0), p.dim, p.dim, "ijacobian"
        )
    from .linalg import fd_jacobian

    return fd_jacobian(lambda _t, v: eval_ifunction(p, t, u, v), t, np.asarray(udot, float))


def eval_ijacobian(p: ProblemSpec, t: float, u, udot, shift: float) -> np.ndarray:
    """``shift * dF/du' + dF/du``, by finite differences when not supplied."""
    if shift < 0:
        raise ProblemError("shift must be non-negative")
    if p.ijacobian is not None:
        return _as_matrix(p.ijacobian(t, u, udot, shift), p.dim, p.dim, "ijacobian")
    if p.ifunction is None:
        return shift * np.eye(p.dim)
    from .linalg import fd_jacobian

    udot = np.asarray(udot, dtype=float)
    Fu = fd_jacobian(lambda _t, v: eval_ifunction(p, t, v, udot), t, np.asarray(u, float))
    if shift == 0.0:
        return Fu
    return shift * udot_jacobian(p, t, u, udot) + Fu


def eval_rhsjacobian(p: ProblemSpec, t: float, u) -> np.ndarray:
    """``dG/du``; zero when G is absent."""
    if p.rhsfunction is None:
        return np.zeros((p.dim, p.dim))
    if p.rhsjacobian is not None:
        return _as_matrix(p.rhsjacobian(t, u), p.dim, p.dim, "rhsjacobian")
    from .linalg import fd_jacobian

    return fd_jacobian(lambda s, v: eval_rhs(p, s, v), t, np.asarray(u, float))


def eval_param_jacobian(p: ProblemSpec, t: float, u) -> np.ndarray:
    """``d(F - G)/dp`` (n-by-np)."""
    if p.nparams == 0:
        return np.zeros((p.dim, 0))
    if p.param_jacobian is None:
        raise ProblemError(f"{p.name}: parameter Jacobian required for sensitivities")
    return _as_matrix(p.param_jacobian(t, u), p.dim, p.nparams, "param_jacobian")


def full_jacobian(p: ProblemSpec, t: float, u, udot, shift: float) -> np.ndarray:
    """Jacobian of ``F(t, u, shift*u + c) - G(t, u)`` with respect to u."""
    J = eval_ijacobian(p, t, u, udot, shift)
    if p.rhsfunction is not None:
        J = J - eval_rhsjacobian(p, t, u)
    return J


def explicit_rhs(p: ProblemSpec, t: float, u) -> np.ndarray:
    """Total time derivative ``u'`` solving ``F(t, u, u') = G(t, u)``.

    Exact when F is affine in u' (all ODE forms); DAEs are rejected.
    """
    if p.equation_kind is EquationKind.DAE:
        raise ProblemError(f"{p.name}: explicit right-hand side undefined for a DAE")
    g = eval_rhs_or_zero(p, t, u)
    if p.ifunction is None:
        return g
    zero = np.zeros(p.dim)
    r0 = eval_ifunction(p, t, u, zero)
    c = p.udot_coefficient
    if isinstance(c, str) and c == "identity":
        return g - r0
    M = udot_jacobian(p, t, u, zero)
    from .linalg import lu_factor, lu_solve

    return lu_solve(lu_factor(M), g - r0)


# ---------------------------------------------------------------------------
# translation of user-facing forms


_REQUIRED = {
    FormKind.NONSTIFF: ("g",),
    FormKind.STIFF: ("h",),
    FormKind.STIFF_MASS: ("h",),
    FormKind.NONSTIFF_MASS: ("g",),
    FormKind.SPLIT: ("g", "h"),
    FormKind.SPLIT_MASS: ("g", "h"),
    FormKind.IMPLICIT: ("F",),
}

_MASS_FORMS = (FormKind.STIFF_MASS, FormKind.NONSTIFF_MASS, FormKind.SPLIT_MASS)


@dataclass
class _MassSolver:
    M: np.ndarray
    lu: object = field(default=None, repr=False)

    def __post_init__(self):
        from .linalg import SingularMatrixError, lu_factor

        try:
            self.lu = lu_factor(self.M)
        except SingularMatrixError as exc:
            raise SingularMassError(f"singular mass matrix: {exc}") from None

    def solve(self, b):
        from .linalg import lu_solve

        return lu_solve(self.lu, b)


def make_problem(
    form: FormKind | str,
    callbacks: Mapping[str, Callable],
    mass=None,
    *,
    dim: int | None = None,
    nparams: int = 0,
    name: str = "problem",
    equation_kind: EquationKind | None = None,
) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from one of seven user-facing shapes.

    Callback keys: ``g``/``h`` (``(t, u) -> array``), their Jacobians
    ``g_jac``/``h_jac``, ``F``/``F_jac`` for the implicit form, and the
    parameter derivatives ``g_p``/``h_p``/``F_p``.  ``dim`` defaults to the
    size of ``mass`` when one is given.

    Forms with a mass matrix factor it once.  An identity mass matrix is
    dropped, so the result is the same as the mass-free form.
    """
    form = FormKind(form) if isinstance(form, str) else form
    missing = [k for k in _REQUIRED[form] if callbacks.get(k) is None]
    if missing:
        raise ProblemError(f"form {form.value!r} requires callbacks {missing}")
    if form in _MASS_FORMS:
        if mass is None:
            raise ProblemError(f"form {form.value!r} requires a mass matrix")
        M = np.atleast_2d(np.asarray(mass, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise ProblemError("mass matrix must be square")
        if dim is None:
            dim = M.shape[0]
        if np.array_equal(M, np.eye(dim)):
            unmassed = {
                FormKind.STIFF_MASS: FormKind.STIFF,
                FormKind.NONSTIFF_MASS: FormKind.NONSTIFF,
                FormKind.SPLIT_MASS: FormKind.SPLIT,
            }[form]
            return make_problem(unmassed, callbacks, dim=dim, nparams=nparams, name=name,
                                equation_kind=equation_kind)
    if dim is None:
        raise ProblemError("dim is required when no mass matrix is given")

    g, h, F = callbacks.get("g"), callbacks.get("h"), callbacks.get("F")
    gj, hj = callbacks.get("g_jac"), callbacks.get("h_jac")
    gp, hp, Fp = callbacks.get("g_p"), callbacks.get("h_p"), callbacks.get("F_p")
    kw: dict = dict(dim=dim, nparams=nparams, name=name)

    def neg(fn):
        return None if fn is None else (lambda t, u: -np.asarray(fn(t, u), dtype=float))

    if form is FormKind.NONSTIFF:
        return ProblemSpec(rhsfunction=g, rhsjacobian=gj, param_jacobian=neg(gp),
                           equation_kind=equation_kind or EquationKind.EXPLICIT_ODE, **kw)

    if form in (FormKind.STIFF, FormKind.SPLIT):
        ifn = lambda t, u, ud: np.asarray(ud, dtype=float) - h(t, u)  # noqa: E731
        ijac = None
        if hj is not None:
            ijac = lambda t, u, ud, s: s * np.eye(dim) - np.asarray(hj(t, u))  # noqa: E731
        pj = None
        if form is FormKind.STIFF:
            pj = neg(hp)
        elif hp is not None or gp is not None:
            pj = _sum_param(neg(hp), neg(gp), dim, nparams)
        return ProblemSpec(ifunction=ifn, ijacobian=ijac, rhsfunction=g if form is FormKind.SPLIT else None,
                           rhsjacobian=gj, param_jacobian=pj, udot_coefficient="identity",
                           equation_kind=equation_kind or EquationKind.IMPLICIT_ODE, **kw)

    if form is FormKind.IMPLICIT:
        return ProblemSpec(ifunction=F, ijacobian=callbacks.get("F_jac"), param_jacobian=Fp,
                           equation_kind=equation_kind or EquationKind.IMPLICIT_ODE, **kw)

    ms = _MassSolver(M)
    if form is FormKind.STIFF_MASS:
        ifn = lambda t, u, ud: M @ np.asarray(ud, dtype=float) - h(t, u)  # noqa: E731
        ijac = None if hj is None else (lambda t, u, ud, s: s * M - np.asarray(hj(t, u)))
        return ProblemSpec(ifunction=ifn, ijacobian=ijac, param_jacobian=neg(hp),
                           udot_coefficient=M.copy(),
                           equation_kind=equation_kind or EquationKind.IMPLICIT_ODE, **kw)

    Minv_g = lambda t, u: ms.solve(g(t, u))  # noqa: E731
    Minv_gj = None if gj is None else (lambda t, u: ms.solve(np.asarray(gj(t, u))))
    Minv_gp = None if gp is None else (lambda t, u: -ms.solve(np.asarray(gp(t, u))))
    if form is FormKind.NONSTIFF_MASS:
        return ProblemSpec(rhsfunction=Minv_g, rhsjacobian=Minv_gj, param_jacobian=Minv_gp,
                           equation_kind=equation_kind or EquationKind.EXPLICIT_ODE, **kw)

    # split with mass: both parts are brought to u' units so that F = G holds
    # exactly as an equation as well as an additive splitting
    ifn = lambda t, u, ud: np.asarray(ud, dtype=float) - ms.solve(h(t, u))  # noqa: E731
    ijac = None
    if hj is not None:
        ijac = lambda t, u, ud, s: s * np.eye(dim) - ms.solve(np.asarray(hj(t, u)))  # noqa: E731
    pj = None
    if hp is not None or gp is not None:
        hp_m = None if hp is None else (lambda t, u: -ms.solve(np.asarray(hp(t, u))))
        pj = _sum_param(hp_m, Minv_gp, dim, nparams)
    return ProblemSpec(ifunction=ifn, ijacobian=ijac, rhsfunction=Minv_g, rhsjacobian=Minv_gj,
                       param_jacobian=pj, udot_coefficient="identity",
                       equation_kind=equation_kind or EquationKind.IMPLICIT_ODE, **kw)


def _sum_param(a, b, n, npar):
    def pj(t, u):
        out = np.zeros((n, npar))
        if a is not None:
            out += a(t, u)
        if b is not None:
            out += b(t, u)
        return out

    return pj
