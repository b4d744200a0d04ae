"""Built-in example problems used by the CLI, the tests and the benchmarks."""

from __future__ import annotations

import difflib
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import FormKind, ProblemError, ProblemSpec, make_problem
from .events import EventSpec


@dataclass(frozen=True)
class Objective:
    """Terminal function psi(u(t_F)) with its gradient."""

    name: str
    phi: Callable[[np.ndarray], float]
    phi_u: Callable[[np.ndarray], np.ndarray]


@dataclass
class ProblemInstance:
    problem: ProblemSpec
    u0: np.ndarray
    params: dict[str, float]
    exact: Callable[[float], np.ndarray] | None = None
    events: EventSpec | None = None
    objectives: dict[str, Objective] = field(default_factory=dict)
    param_names: tuple[str, ...] = ()  # order of the problem's parameter vector


@dataclass(frozen=True)
class ProblemLibraryEntry:
    name: str
    builder: Callable[[dict[str, float]], ProblemInstance]
    defaults: Mapping[str, object]
    param_schema: Mapping[str, float]
    description: str = ""

    def build(self, **overrides) -> ProblemInstance:
        unknown = sorted(set(overrides) - set(self.param_schema))
        if unknown:
            raise ProblemError(
                f"unknown parameter(s) {unknown} for {self.name!r}; "
                f"accepted: {sorted(self.param_schema)}"
            )
        params = {k: float(overrides.get(k, v)) for k, v in self.param_schema.items()}
        return self.builder(params)


def _component(i: int, n: int) -> Objective:
    e = np.zeros(n)
    e[i] = 1.0
    return Objective(f"u{i}", lambda u: float(u[i]), lambda u: e.copy())


# kinetics -----------------------------------------------------------------


def kinetics_solution(t: float, u0, k: float) -> np.ndarray:
    u0 = np.asarray(u0, dtype=float)
    d0 = u0[0] - u0[1]
    q = k * t if d0 == 0.0 else (1.0 - np.exp(-k * t * d0)) / d0
    a = u0[0] / (1.0 + u0[1] * q)
    b = a - d0
    return np.array([a, b, u0[1] + u0[2] - b])


def _kinetics(par):
    k = par["k"]
    u0 = np.array([par["u0_0"], par["u0_1"], par["u0_2"]])

    def F(t, u, ud):
        r = k * u[0] * u[1]
        return np.array([ud[0] + r, ud[1] + r, ud[2] - r])

    def J(t, u, ud, a):
        return np.array([
            [a + k * u[1], k * u[0], 0.0],
            [k * u[1], a + k * u[0], 0.0],
            [-k * u[1], -k * u[0], a],
        ])

    def F_p(t, u):
        r = u[0] * u[1]
        return np.array([[r], [r], [-r]])

    spec = make_problem(FormKind.IMPLICIT, {"F": F, "F_jac": J, "F_p": F_p},
                        dim=3, nparams=1, name="kinetics")
    return ProblemInstance(
        spec, u0, par, exact=lambda t: kinetics_solution(t, u0, k),
        objectives={f"u{i}": _component(i, 3) for i in range(3)}, param_names=("k",),
    )


# orego --------------------------------------------------------------------


def _orego(par):
    def F(t, x, xd):
        return np.array([
            xd[0] - 77.27 * (x[1] + x[0] * (1 - 8.375e-6 * x[0] - x[1])),
            xd[1] - 1 / 77.27 * (x[2] - (1 + x[0]) * x[1]),
            xd[2] - 0.161 * (x[0] - x[2]),
        ])

    def J(t, x, xd, a):
        return np.array([
            [a - 77.27 * ((1 - 8.375e-6 * x[0] - x[1]) - 8.375e-6 * x[0]), -77.27 * (1 - x[0]), 0.0],
            [1 / 77.27 * x[1], a + 1 / 77.27 * (1 + x[0]), -1 / 77.27],
            [-0.161, 0.0, a + 0.161],
        ])

    spec = make_problem(FormKind.IMPLICIT, {"F": F, "F_jac": J}, dim=3, name="orego")
    return ProblemInstance(spec, np.array([1.0, 2.0, 3.0]), par,
                           objectives={f"u{i}": _component(i, 3) for i in range(3)})


# gray-scott ---------------------------------------------------------------

GS_LENGTH = 2.5


def _periodic_laplacian(n: int, h: float) -> sp.csr_matrix:
    e = np.ones(n)
    D = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="lil")
    D[0, n - 1] = D[n - 1, 0] = 1.0
    D = D.tocsr() / (h * h)
    eye = sp.identity(n, format="csr")
    return (sp.kron(eye, D) + sp.kron(D, eye)).tocsr()


def grayscott_initial(n: int) -> np.ndarray:
    """u=1, v=0 except a centred square of side L/5 with u=1/2, v=1/4.

    State layout is interleaved, ``[u_00, v_00, u_01, v_01, ...]`` with the x
    index fastest.
    """
    h = GS_LENGTH / n
    x = np.arange(n) * h
    inside = np.abs(x - GS_LENGTH / 2) <= GS_LENGTH / 10
    sq = np.logical_and.outer(inside, inside)
    u = np.where(sq, 0.5, 1.0)
    v = np.where(sq, 0.25, 0.0)
    out = np.empty(2 * n * n)
    out[0::2] = u.ravel()
    out[1::2] = v.ravel()
    return out


def _grayscott(par):
    n = int(par["N"])
    if n < 3:
        raise ProblemError("grayscott needs N >= 3")
    D1, D2, gam, kap = par["D1"], par["D2"], par["gamma"], par["kappa"]
    lap = _periodic_laplacian(n, GS_LENGTH / n)
    m = n * n

    def g(t, y):
        u, v = y[0::2], y[1::2]
        uv2 = u * v * v
        out = np.empty_like(y)
        out[0::2] = D1 * (lap @ u) - uv2 + gam * (1 - u)
        out[1::2] = D2 * (lap @ v) + uv2 - (gam + kap) * v
        return out

    # permutation from block [u; v] ordering to interleaved ordering
    perm = np.empty(2 * m, dtype=int)
    perm[0::2] = np.arange(m)
    perm[1::2] = m + np.arange(m)

    def g_jac(t, y):
        u, v = y[0::2], y[1::2]
        blk = sp.bmat([
            [D1 * lap + sp.diags(-v * v - gam), sp.diags(-2 * u * v)],
            [sp.diags(v * v), D2 * lap + sp.diags(2 * u * v - (gam + kap))],
        ]).tocsr()
        return blk[perm][:, perm].toarray()

    spec = make_problem(FormKind.NONSTIFF, {"g": g, "g_jac": g_jac}, dim=2 * m, name="grayscott")
    return ProblemInstance(spec, grayscott_initial(n), par)


# bouncing ball ------------------------------------------------------------


def _bouncing_ball(par):
    grav, rest = par["g"], par["restitution"]

    def g(t, u):
        return np.array([u[1], -grav])

    def g_jac(t, u):
        return np.array([[0.0, 1.0], [0.0, 0.0]])

    def post(ids, t, u, forward):
        u = u.copy()
        u[1] = -rest * u[1]
        return u

    ev = EventSpec(1, lambda t, u: np.array([u[0]]), direction=-1, post_event=post, tol=1e-10)
    spec = make_problem(FormKind.NONSTIFF, {"g": g, "g_jac": g_jac}, dim=2, name="bouncing-ball")
    return ProblemInstance(spec, np.array([par["height"], 0.0]), par, events=ev)


# linear test --------------------------------------------------------------


def _linear(par):
    """``u' = lam u + mu u`` with ``lam u`` treated as the stiff part."""
    lam, mu = par["lam"], par["mu"]
    cb = {
        "h": lambda t, u: lam * u,
        "h_jac": lambda t, u: np.array([[lam]]),
        "g": lambda t, u: mu * u,
        "g_jac": lambda t, u: np.array([[mu]]),
        "h_p": lambda t, u: np.array([[u[0], 0.0]]),
        "g_p": lambda t, u: np.array([[0.0, u[0]]]),
    }
    spec = make_problem(FormKind.SPLIT, cb, dim=1, nparams=2, name="linear-test")
    u0 = np.array([par["u0"]])
    return ProblemInstance(spec, u0, par, exact=lambda t: u0 * np.exp((lam + mu) * t),
                           objectives={"u0": _component(0, 1)}, param_names=("lam", "mu"))


LIBRARY: dict[str, ProblemLibraryEntry] = {
    e.name: e
    for e in (
        ProblemLibraryEntry(
            "kinetics", _kinetics,
            dict(scheme="rosw:ra34pw2", dt=0.001, max_time=20.0, max_steps=1000,
                 final_time="stepover", adapt="basic", rtol=1e-6, atol=1e-6),
            {"k": 0.9, "u0_0": 1.0, "u0_1": 0.7, "u0_2": 0.0},
            "bimolecular reaction A + B -> C with a closed-form solution",
        ),
        ProblemLibraryEntry(
            "orego", _orego,
            dict(scheme="rosw:ra34pw2", dt=0.1, max_time=360.0, max_steps=2000,
                 final_time="interpolate", adapt="basic", rtol=1e-3, atol=[1e-2, 1e-1, 1e-4]),
            {},
            "Oregonator, stiff three-species oscillator",
        ),
        ProblemLibraryEntry(
            "grayscott", _grayscott,
            dict(scheme="arkimex:ark3", dt=1e-4, max_time=1.0, max_steps=1000,
                 final_time="stepover", adapt="basic", rtol=1e-4, atol=1e-4,
                 scheme_opts={"fully_implicit": True}),
            {"N": 32, "D1": 8.0e-5, "D2": 4.0e-5, "gamma": 0.024, "kappa": 0.06},
            "two-species reaction-diffusion on a periodic grid",
        ),
        ProblemLibraryEntry(
            "bouncing-ball", _bouncing_ball,
            dict(scheme="rk:dp5", dt=0.01, max_time=15.0, max_steps=100000,
                 final_time="matchstep", adapt="basic", rtol=1e-10, atol=1e-10),
            {"height": 10.0, "g": 9.8, "restitution": 0.9},
            "ball under gravity with an inelastic floor",
        ),
        ProblemLibraryEntry(
            "linear-test", _linear,
            dict(scheme="rk:rk4", dt=0.1, max_time=1.0, max_steps=100000,
                 final_time="matchstep", adapt="none", rtol=1e-6, atol=1e-6),
            {"lam": -1.0, "mu": 0.0, "u0": 1.0},
            "scalar u' = (lam + mu) u, lam implicit and mu explicit under IMEX",
        ),
    )
}


def get_problem(name: str) -> ProblemLibraryEntry:
    try:
        return LIBRARY[name]
    except KeyError:
        close = difflib.get_close_matches(name, list(LIBRARY), n=3)
        hint = f"; did you mean {', '.join(close)}?" if close else ""
        raise ProblemError(
            f"unknown problem {name!r}{hint} (available: {', '.join(LIBRARY)})"
        ) from None


def build_problem(name: str, **params) -> ProblemInstance:
    return get_problem(name).build(**params)
