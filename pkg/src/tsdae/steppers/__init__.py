"""Stepping kernels and the integration driver."""

from __future__ import annotations

import numpy as np

from ..core import ProblemError, ProblemSpec
from ..tableaux import (
    FAMILIES,
    BDFMethod,
    ButcherTableau,
    IMEXTableau,
    RosTableau,
    ThetaMethod,
    UnknownSchemeError,
    available,
    registry_get,
)
from .arkimex import ARKIMEXStepper
from .base import Counters, NewtonFailure, StageData, Stepper, StepOutcome, StepperState, hermite
from .bdf import BDFStepper, bdf_step
from .erk import ERKStepper, erk_step
from .rosw import RosWStepper, rosw_step
from .solve import AdaptLogEntry, SolveResult, StepInfo, Termination, solve
from .theta import ThetaStepper

SCHEME_FAMILIES = ("rk", "theta", "arkimex", "dirk", "rosw", "bdf")


def parse_scheme(scheme: str) -> tuple[str, str]:
    """``"family:name"`` or a bare registry name -> ``(family, name)``."""
    if ":" in scheme:
        family, name = scheme.split(":", 1)
        family = family.strip().lower()
        if family not in SCHEME_FAMILIES:
            raise ProblemError(
                f"unknown scheme family {family!r}; available: {', '.join(SCHEME_FAMILIES)}"
            )
        return family, name.strip()
    name = scheme.strip()
    if name not in FAMILIES:
        raise UnknownSchemeError(name, available())
    return FAMILIES[name], name


def make_stepper(problem: ProblemSpec, scheme, **opts) -> Stepper:
    """Build a stepper from ``"family:name"`` or a tableau object.

    Keyword options are passed to the stepper (``newton``, ``fully_implicit``,
    ``initial_guess``, ``reuse_jacobian``, ``jacobian``, ``starter``).
    """
    if isinstance(scheme, Stepper):
        return scheme
    if isinstance(scheme, ButcherTableau):
        return ERKStepper(problem, scheme, **opts)
    if isinstance(scheme, IMEXTableau):
        return ARKIMEXStepper(problem, scheme, **opts)
    if isinstance(scheme, RosTableau):
        return RosWStepper(problem, scheme, **opts)
    if isinstance(scheme, ThetaMethod):
        return ThetaStepper(problem, scheme.theta, scheme.name, **opts)
    if isinstance(scheme, BDFMethod):
        return _bdf(problem, scheme.order, opts)

    family, name = parse_scheme(str(scheme))
    if family == "theta":
        try:
            theta = float(name)
            return ThetaStepper(problem, theta, **opts)
        except ValueError:
            pass
        tab = registry_get(name)
        if not isinstance(tab, ThetaMethod):
            raise ProblemError(f"{name!r} is not a theta method")
        return ThetaStepper(problem, tab.theta, tab.name, **opts)
    if family == "bdf":
        order = name[3:] if name.startswith("bdf") else name
        try:
            k = int(order)
        except ValueError:
            raise ProblemError(f"bad BDF order {name!r}") from None
        return _bdf(problem, k, opts)
    tab = registry_get(name)
    expected = {
        "rk": ButcherTableau, "arkimex": IMEXTableau, "dirk": IMEXTableau, "rosw": RosTableau,
    }[family]
    if not isinstance(tab, expected):
        raise ProblemError(f"{name!r} does not belong to family {family!r}")
    if family == "dirk":
        opts = {**opts, "fully_implicit": True}
        st = ARKIMEXStepper(problem, tab, **opts)
        st.family = "dirk"
        return st
    return make_stepper(problem, tab, **opts)


def _bdf(problem, k, opts):
    opts = dict(opts)
    starter = opts.pop("starter", None)
    if isinstance(starter, str):
        starter = make_stepper(problem, starter, newton=opts.get("newton"))
    if not 1 <= k <= 6:
        raise ProblemError(f"BDF order must be between 1 and 6, got {k}")
    return BDFStepper(problem, k, starter=starter, **opts)


# functional forms -----------------------------------------------------------


def theta_step(p: ProblemSpec, theta: float, state: StepperState) -> StepOutcome:
    st = ThetaStepper(p, theta)
    out = st.step(state.t, state.u, state.dt)
    _merge(state, st)
    return out


def ark_imex_step(p: ProblemSpec, tab: IMEXTableau, state: StepperState,
                  fully_implicit: bool = False) -> StepOutcome:
    st = ARKIMEXStepper(p, tab, fully_implicit=fully_implicit, initial_guess="z")
    out = st.step(state.t, state.u, state.dt)
    state.stage_slopes = out.stage_data.K
    _merge(state, st)
    return out


def _merge(state: StepperState, st: Stepper) -> None:
    for key, val in st.counters.as_dict().items():
        setattr(state.counters, key, getattr(state.counters, key) + val)


def interpolate(state, stage_data: StageData, tab, t_query: float) -> np.ndarray:
    """Dense output from retained stage data.

    Uses the tableau's ``bstar`` when present, otherwise cubic Hermite on
    endpoint slopes stored in ``stage_data.extra["slopes"]``, otherwise
    linear interpolation.
    """
    sd = stage_data
    if sd is None:
        raise ProblemError("no stage data retained for interpolation")
    if t_query == sd.t + sd.dt:
        return sd.u1.copy()
    theta = (t_query - sd.t) / sd.dt
    if theta == 0.0:
        return sd.u0.copy()
    bstar = getattr(tab, "bstar", None) if tab is not None else None
    if bstar is not None and sd.K is not None:
        return sd.u0 + sd.dt * ((bstar @ theta ** np.arange(1, bstar.shape[1] + 1)) @ sd.K)
    slopes = sd.extra.get("slopes")
    if slopes is not None:
        return hermite(sd.u0, slopes[0], sd.u1, slopes[1], sd.dt, theta)
    return sd.u0 + theta * (sd.u1 - sd.u0)


__all__ = [
    "ARKIMEXStepper", "AdaptLogEntry", "BDFStepper", "Counters", "ERKStepper", "NewtonFailure",
    "RosWStepper", "SolveResult", "StageData", "StepInfo", "StepOutcome", "Stepper",
    "StepperState", "Termination", "ThetaStepper", "ark_imex_step", "bdf_step", "erk_step",
    "interpolate", "make_stepper", "parse_scheme", "rosw_step", "solve", "theta_step",
]
