"""Implicit-form ODE/DAE time integration with adaptivity, events and sensitivities."""

from .core import (
    EquationKind,
    FinalTimePolicy,
    FormKind,
    ProblemSpec,
    SolveOptions,
    ToleranceSpec,
    make_problem,
)
from .adapt import AdaptConfig, AdaptKind
from .steppers import make_stepper, solve

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "AdaptKind", "EquationKind", "FinalTimePolicy", "FormKind", "ProblemSpec",
    "SolveOptions", "ToleranceSpec", "make_problem", "make_stepper", "solve",
]
