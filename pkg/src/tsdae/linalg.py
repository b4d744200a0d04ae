"""Dense LU, finite-difference Jacobians and Jacobian verification."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .core import NonFiniteError, ProblemSpec, StepFailure, eval_ifunction, eval_ijacobian

EPS = np.finfo(float).eps
SQRT_EPS = np.sqrt(EPS)


class SingularMatrixError(StepFailure):
    def __init__(self, index: int, pivot: float, threshold: float):
        self.index = int(index)
        self.pivot = float(pivot)
        self.threshold = float(threshold)
        super().__init__(
            f"matrix is singular to working precision: |pivot {index}| = {abs(pivot):.3e} "
            f"<= {threshold:.3e}"
        )


@dataclass(frozen=True)
class LUFactorization:
    """Packed L\\U factors with ``P A = L U``.

    ``perm`` is the row permutation: row ``i`` of ``P A`` is row ``perm[i]`` of A.
    """

    factors: np.ndarray
    pivots: np.ndarray
    perm: np.ndarray

    @property
    def n(self) -> int:
        return self.factors.shape[0]

    @property
    def L(self) -> np.ndarray:
        return np.tril(self.factors, -1) + np.eye(self.n)

    @property
    def U(self) -> np.ndarray:
        return np.triu(self.factors)


def _perm_from_pivots(piv: np.ndarray) -> np.ndarray:
    perm = np.arange(len(piv))
    for i, p in enumerate(piv):
        perm[i], perm[p] = perm[p], perm[i]
    return perm


def lu_factor(A) -> LUFactorization:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"lu_factor needs a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        bad = np.flatnonzero(~np.isfinite(A.ravel()))[0]
        raise NonFiniteError("matrix", bad, A.ravel()[bad])
    n = A.shape[0]
    thr = n * EPS * np.linalg.norm(A, np.inf)
    with warnings.catch_warnings():
        # exact zero pivots are reported below with their index
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    d = np.abs(np.diag(lu))
    small = np.flatnonzero(d <= thr)
    if small.size:
        i = small[0]
        raise SingularMatrixError(i, lu[i, i], thr)
    lu.setflags(write=False)
    return LUFactorization(lu, piv, _perm_from_pivots(piv))


def lu_solve(f: LUFactorization, b, transpose: bool = False) -> np.ndarray:
    """Solve ``A x = b`` (or ``A^T x = b``); ``b`` may be a vector or a matrix."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, factor is {f.n}x{f.n}")
    return sla.lu_solve((f.factors, f.pivots), b, trans=1 if transpose else 0, check_finite=False)


@dataclass(frozen=True)
class FDParams:
    rel: float = SQRT_EPS
    floor: float = 1.0  # typical magnitude of u; keeps h away from zero at u = 0


def fd_jacobian(f, t: float, u, scale: FDParams | None = None) -> np.ndarray:
    """One-sided differences, one column per variable."""
    scale = scale or FDParams()
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        bad = np.flatnonzero(~np.isfinite(u))[0]
        raise NonFiniteError("fd base point", bad, u[bad])
    floor = scale.floor
    f0 = np.asarray(f(t, u), dtype=float)
    J = np.empty((f0.size, u.size))
    for j in range(u.size):
        h = scale.rel * max(abs(u[j]), floor)
        up = u.copy()
        up[j] += h
        h = up[j] - u[j]  # exactly representable step
        fj = np.asarray(f(t, up), dtype=float)
        if not np.all(np.isfinite(fj)):
            bad = np.flatnonzero(~np.isfinite(fj))[0]
            raise NonFiniteError(f"fd column {j}", bad, fj[bad])
        J[:, j] = (fj - f0) / h
    return J


@dataclass
class JacobianReport:
    max_abs_diff: float
    max_rel_diff: float
    worst_entry: tuple[int, int]
    fd_matrix: np.ndarray = field(repr=False)
    user_matrix: np.ndarray = field(repr=False)
    flagged: list[tuple[int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flagged


def jacobian_verify(p: ProblemSpec, t: float, u, udot, shift: float, tol: float = 1e-5) -> JacobianReport:
    """Compare the user ``ijacobian`` with a differenced ``shift*F_u' + F_u``.

    Relative differences use the floor ``sqrt(eps) * max(1, max|J_fd|)`` so
    that structurally zero entries do not blow up.
    """
    if p.ijacobian is None:
        raise ValueError(f"{p.name}: no user ijacobian to verify")
    u = np.asarray(u, dtype=float)
    udot = np.asarray(udot, dtype=float)
    user = eval_ijacobian(p, t, u, udot, shift)
    Fu = fd_jacobian(lambda _t, v: eval_ifunction(p, t, v, udot), t, u)
    fd = Fu
    if shift != 0.0:
        Fud = fd_jacobian(lambda _t, v: eval_ifunction(p, t, u, v), t, udot)
        fd = shift * Fud + Fu
    diff = np.abs(user - fd)
    floor = SQRT_EPS * max(1.0, float(np.max(np.abs(fd), initial=0.0)))
    rel = diff / np.maximum(np.abs(fd), floor)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else (0, 0)
    flagged = [tuple(int(i) for i in ij) for ij in np.argwhere(rel > tol)]
    return JacobianReport(
        max_abs_diff=float(diff.max(initial=0.0)),
        max_rel_diff=float(rel.max(initial=0.0)),
        worst_entry=(int(worst[0]), int(worst[1])),
        fd_matrix=fd,
        user_matrix=user,
        flagged=flagged,
    )
