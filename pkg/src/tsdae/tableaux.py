"""Coefficient registry for the one-step, IMEX, Rosenbrock-W and BDF families.

Every entry is validated against rooted-tree order conditions by
:func:`check_order_conditions`; the checker, not the transcription, is the
authority on the coefficients.
"""

from __future__ import annotations

import difflib
import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction as Fr
from functools import lru_cache
from typing import Any, Callable

import numpy as np


class UnknownSchemeError(KeyError):
    def __init__(self, name: str, available: list[str]):
        self.name = name
        self.available = available
        close = difflib.get_close_matches(name, available, n=3)
        hint = f" (did you mean {', '.join(close)}?)" if close else ""
        super().__init__(
            f"unknown scheme {name!r}{hint}; available: {', '.join(available)}"
        )

    def __str__(self) -> str:
        return self.args[0]


def _frozen(x, ndim: int | None = None) -> np.ndarray | None:
    if x is None:
        return None
    a = np.array([[float(v) for v in row] for row in x] if ndim == 2 else [float(v) for v in x])
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    p: int
    b_hat: np.ndarray | None = None
    p_hat: int | None = None
    bstar: np.ndarray | None = None  # (s, p*) with B*_i(theta) = sum_j bstar[i, j] theta**(j+1)
    fsal: bool = False

    @property
    def s(self) -> int:
        return len(self.b)

    @property
    def explicit(self) -> bool:
        return bool(np.all(np.triu(self.A) == 0.0))

    def __eq__(self, other):
        return isinstance(other, ButcherTableau) and _same_fields(self, other)

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class IMEXTableau:
    name: str
    explicit: ButcherTableau
    implicit: ButcherTableau
    p: int
    p_hat: int | None = None
    stiffly_accurate: bool = False

    @property
    def s(self) -> int:
        return self.explicit.s

    @property
    def c(self) -> np.ndarray:
        return self.implicit.c

    @property
    def bstar(self) -> np.ndarray | None:
        # shared interpolation weights for both parts
        return self.implicit.bstar

    @property
    def has_embedded(self) -> bool:
        return self.explicit.b_hat is not None and self.implicit.b_hat is not None

    def __eq__(self, other):
        return isinstance(other, IMEXTableau) and _same_fields(self, other)

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class RosTableau:
    """Rosenbrock-W coefficients in the (A, Gamma, b) form plus the
    transformed (omega, d, m) coefficients used by the stepper."""

    name: str
    A: np.ndarray
    Gamma: np.ndarray
    b: np.ndarray
    b_hat: np.ndarray | None
    p: int
    p_hat: int | None
    w_method: bool = False
    l_stable: bool = False
    stiffly_accurate: bool = False
    transformed: dict = field(default_factory=dict, repr=False)

    @property
    def s(self) -> int:
        return len(self.b)

    @property
    def c(self) -> np.ndarray:
        return self.A.sum(axis=1)

    @property
    def gamma_diag(self) -> np.ndarray:
        return np.diag(self.Gamma)

    @property
    def has_explicit_stages(self) -> bool:
        return bool(np.any(self.gamma_diag == 0.0))

    @property
    def omega(self):
        return self.transformed.get("omega")

    @property
    def d(self):
        return self.transformed.get("d")

    @property
    def m(self):
        return self.transformed.get("m")

    @property
    def m_hat(self):
        return self.transformed.get("m_hat")

    @property
    def gamma_sums(self):
        return self.transformed.get("gamma_sums")

    def __eq__(self, other):
        return isinstance(other, RosTableau) and _same_fields(self, other)

    __hash__ = object.__hash__


@dataclass(frozen=True)
class ThetaMethod:
    name: str
    theta: float

    @property
    def p(self) -> int:
        return 2 if self.theta == 0.5 else 1

    def as_butcher(self) -> ButcherTableau:
        """One-leg theta method written as an equivalent two-stage tableau."""
        th = self.theta
        return ButcherTableau(
            name=self.name,
            A=_frozen([[th]], 2),
            b=_frozen([1.0]),
            c=_frozen([th]),
            p=self.p,
        )


@dataclass(frozen=True)
class BDFMethod:
    name: str
    order: int

    @property
    def p(self) -> int:
        return self.order


def _same_fields(a, b) -> bool:
    for k in a.__dataclass_fields__:
        x, y = getattr(a, k), getattr(b, k)
        if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            if x is None or y is None or not np.array_equal(x, y):
                return False
        elif isinstance(x, dict):
            if x.keys() != y.keys():
                return False
            for kk in x:
                if not np.array_equal(x[kk], y[kk]):
                    return False
        elif x != y:
            return False
    return True


# ---------------------------------------------------------------------------
# Rosenbrock transformation


def ros_transform(Gamma, A, b, b_hat=None, allow_explicit_stages: bool = False):
    """Change of variables v = Gamma k for a Rosenbrock tableau.

    Returns ``(omega, d, m, m_hat, gamma_sums)`` with ``omega = A Gamma^-1``,
    ``d = diag(1/gamma_ii) - Gamma^-1`` (strictly lower part), ``m = b Gamma^-1``.
    ``gamma_sums[i]`` is the row sum of Gamma including the diagonal, the
    coefficient of the time-derivative term.

    Rows with ``gamma_ii == 0`` make Gamma singular; those tableaux are only
    accepted with ``allow_explicit_stages`` and the transformed entries come
    back as ``None`` (the stepper then works with untransformed slopes).
    """
    Gamma = np.asarray(Gamma, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(np.triu(Gamma, 1) != 0.0):
        raise ValueError("Gamma must be lower triangular")
    diag = np.diag(Gamma)
    gamma_sums = Gamma.sum(axis=1)
    if np.any(diag == 0.0):
        if not allow_explicit_stages:
            raise ValueError(
                "Gamma is structurally singular (zero diagonal in rows "
                f"{np.flatnonzero(diag == 0.0).tolist()}); pass allow_explicit_stages"
            )
        return None, None, None, None, gamma_sums
    Ginv = np.linalg.inv(Gamma)
    omega = A @ Ginv
    d = np.diag(1.0 / diag) - Ginv
    m = b @ Ginv
    m_hat = None if b_hat is None else np.asarray(b_hat, dtype=float) @ Ginv
    return omega, d, m, m_hat, gamma_sums


def ros_untransform(omega, d, m, Gamma_diag):
    """Inverse of :func:`ros_transform`: recover (Gamma, A, b)."""
    Ginv = np.diag(1.0 / np.asarray(Gamma_diag)) - np.asarray(d)
    Gamma = np.linalg.inv(Ginv)
    return Gamma, np.asarray(omega) @ Gamma, np.asarray(m) @ Gamma


# ---------------------------------------------------------------------------
# Rooted trees and order conditions


@lru_cache(maxsize=None)
def rooted_trees(order: int) -> tuple:
    """All rooted trees with ``order`` vertices, as canonical nested tuples."""
    if order == 1:
        return ((),)
    out = set()
    for parts in _partitions(order - 1):
        for combo in itertools.product(*(rooted_trees(k) for k in parts)):
            out.add(tuple(sorted(combo)))
    return tuple(sorted(out))


def _partitions(n: int, largest: int | None = None):
    largest = n if largest is None else largest
    if n == 0:
        yield ()
        return
    for k in range(min(n, largest), 0, -1):
        for rest in _partitions(n - k, k):
            yield (k,) + rest


def tree_order(t) -> int:
    return 1 + sum(tree_order(c) for c in t)


def tree_density(t) -> int:
    g = tree_order(t)
    for c in t:
        g *= tree_density(c)
    return g


def tree_label(t) -> str:
    if not t:
        return "o"
    return "[" + ",".join(tree_label(c) for c in t) + "]"


def _weights(t, A, linear=None):
    s = A.shape[0]
    out = np.ones(s)
    for child in t:
        M = linear if (linear is not None and len(t) == 1) else A
        out = out * (M @ _weights(child, A, linear))
    return out


def _colored_weights(t, colors, mats):
    """t: nested tuple of (color, children)."""
    s = mats[0].shape[0]
    out = np.ones(s)
    for color, children in t:
        out = out * (mats[color] @ _colored_weights(children, colors, mats))
    return out


def _colorings(t):
    """Yield every 2-coloring of tree ``t`` as nested (color, children) tuples."""
    child_options = [list(_colorings(c)) for c in t]
    for col in (0, 1):
        for kids in itertools.product(*child_options):
            yield (col, tuple(kids))


def _butcher_conditions(A, b, up_to, tag="", linear=None):
    res = []
    for q in range(1, up_to + 1):
        for t in rooted_trees(q):
            val = float(b @ _weights(t, A, linear)) - 1.0 / tree_density(t)
            res.append((f"{tag}p{q}:{tree_label(t)}", val))
    return res


def _imex_conditions(Ae, be, Ai, bi, up_to, tag=""):
    mats = (Ae, Ai)
    bs = (be, bi)
    res = []
    for q in range(1, up_to + 1):
        for t in rooted_trees(q):
            for root_col, kids in _colorings(t):
                w = _colored_weights(kids, None, mats)
                val = float(bs[root_col] @ w) - 1.0 / tree_density(t)
                res.append((f"{tag}p{q}:{'EI'[root_col]}{_colored_label(kids)}", val))
    return res


def _colored_label(kids) -> str:
    if not kids:
        return ""
    return "[" + ",".join("EI"[c] + _colored_label(k) for c, k in kids) + "]"


def check_order_conditions(tab, up_to: int | None = None) -> list[tuple[str, float]]:
    """Order-condition residuals ``(condition_id, value)`` up to ``up_to``.

    Butcher tableaux use the classical rooted-tree conditions; Rosenbrock
    tableaux replace A by A + Gamma on edges leaving single-child vertices;
    IMEX pairs are checked on all bicolored trees (coupling conditions).
    Embedded weights are checked up to their own declared order and reported
    with an ``embedded:`` prefix.
    """
    if isinstance(tab, ThetaMethod):
        tab = tab.as_butcher()
    up_to = tab.p if up_to is None else up_to
    if up_to > 5:
        raise ValueError("order conditions are tabulated up to order 5")
    if isinstance(tab, ButcherTableau):
        res = _butcher_conditions(tab.A, tab.b, up_to)
        if tab.b_hat is not None and tab.p_hat:
            res += _butcher_conditions(tab.A, tab.b_hat, min(tab.p_hat, up_to), "embedded:")
        return res
    if isinstance(tab, RosTableau):
        lin = tab.A + tab.Gamma
        res = _butcher_conditions(tab.A, tab.b, up_to, linear=lin)
        if tab.b_hat is not None and tab.p_hat:
            res += _butcher_conditions(
                tab.A, tab.b_hat, min(tab.p_hat, up_to), "embedded:", linear=lin
            )
        return res
    if isinstance(tab, IMEXTableau):
        E, I = tab.explicit, tab.implicit
        res = _imex_conditions(E.A, E.b, I.A, I.b, up_to)
        if tab.has_embedded and tab.p_hat:
            res += _imex_conditions(
                E.A, E.b_hat, I.A, I.b_hat, min(tab.p_hat, up_to), "embedded:"
            )
        return res
    raise TypeError(f"no order conditions for {type(tab).__name__}")


def dense_eval(tab, theta: float) -> np.ndarray:
    """Dense-output weights B*(theta) = sum_j bstar[:, j] theta**(j+1)."""
    bstar = tab.bstar
    if bstar is None:
        raise ValueError(f"{tab.name} has no dense-output polynomial")
    powers = theta ** np.arange(1, bstar.shape[1] + 1)
    return bstar @ powers


def dense_conditions(tab, theta: float, up_to: int) -> list[tuple[str, float]]:
    """Residuals of the interpolant's bushy-tree conditions at ``theta``:
    sum_i B*_i c_i^(q-1) = theta^q / q for q = 1..up_to."""
    B = dense_eval(tab, theta)
    c = tab.c
    return [(f"dense:q{q}", float(B @ c ** (q - 1)) - theta**q / q) for q in range(1, up_to + 1)]


# ---------------------------------------------------------------------------
# Coefficients


def _hermite_bstar(b, first: int, last: int) -> list[list[float]]:
    """Cubic Hermite dense output written as stage weights for FSAL tableaux:
    u(theta) uses u0, h*k[first] = h f(u0), u1 and h*k[last] = h f(u1)."""
    # h01 = 3t^2 - 2t^3, h10 = t - 2t^2 + t^3, h11 = -t^2 + t^3
    rows = []
    for i, bi in enumerate(b):
        coeffs = [0.0, 3.0 * bi, -2.0 * bi]
        if i == first:
            coeffs = [coeffs[0] + 1.0, coeffs[1] - 2.0, coeffs[2] + 1.0]
        if i == last:
            coeffs = [coeffs[0], coeffs[1] - 1.0, coeffs[2] + 1.0]
        rows.append(coeffs)
    return rows


def _erk(name, A, b, p, b_hat=None, p_hat=None, bstar=None, fsal=False):
    s = len(b)
    full = [[Fr(0)] * s for _ in range(s)]
    for i, row in enumerate(A):
        for j, v in enumerate(row):
            full[i][j] = Fr(v) if not isinstance(v, float) else v
    c = [sum(row) for row in full]
    return ButcherTableau(
        name=name,
        A=_frozen(full, 2),
        b=_frozen(b),
        c=_frozen(c),
        p=p,
        b_hat=_frozen(b_hat),
        p_hat=p_hat,
        bstar=_frozen(bstar, 2) if bstar is not None else None,
        fsal=fsal,
    )


def _ssp104():
    """Ketcheson's ten-stage, fourth-order SSP method, converted from its
    low-storage Shu-Osher form to Butcher coefficients."""
    s = 10

    def e(k):
        v = [Fr(0)] * (s + 1)
        v[k] = Fr(1)
        return v

    def add(x, y, a=Fr(1), b=Fr(1)):
        return [a * xi + b * yi for xi, yi in zip(x, y)]

    # index 0 is u, index k (1..10) is stage slope K_k
    stages = [e(0)]
    q = e(0)
    for k in range(1, 6):
        q = add(q, e(k), b=Fr(1, 6))
        if k < 5:
            stages.append(q)
    q2 = add(e(0), q, Fr(1, 25), Fr(9, 25))
    q = add(q2, q, Fr(15), Fr(-5))
    stages.append(q)
    for k in range(6, 10):
        q = add(q, e(k), b=Fr(1, 6))
        stages.append(q)
    unew = add(add(q2, q, b=Fr(3, 5)), e(10), b=Fr(1, 10))
    A = [[st[j + 1] for j in range(s)] for st in stages]
    b = [unew[j + 1] for j in range(s)]
    return _erk("ssp-rk104", A, b, 4)


# Shampine's free fourth-order interpolant for the Dormand-Prince pair;
# column j multiplies theta**(j+1).
_DP5_DENSE = [
    [1.0, -2.8535800653862835, 3.0717434641059005, -1.1270175653862835],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 4.023133379230305, -6.249321565289, 2.675424484351598],
    [0.0, -3.7324019615885042, 10.068970589843675, -5.685526961588504],
    [0.0, 2.5548038301849423, -6.399112377351017, 3.5219323679207912],
    [0.0, -1.3744241142186024, 3.272657752246729, -1.7672812570757455],
    [0.0, 1.3824689317781436, -3.764937863556287, 2.382468931778144],
]


def _dp5_dense(b) -> list[list[float]]:
    # refit the theta**4 column so that B*(1) reproduces b bit for bit
    rows = [list(r) for r in _DP5_DENSE]
    for r, bi in zip(rows, b):
        r[3] = float(bi) - (r[0] + r[1] + r[2])
    return rows


def _explicit_tableaux() -> dict[str, Callable[[], Any]]:
    h = Fr(1, 2)
    bs3_b = [Fr(2, 9), Fr(1, 3), Fr(4, 9), Fr(0)]
    dp5_b = [Fr(35, 384), Fr(0), Fr(500, 1113), Fr(125, 192), Fr(-2187, 6784), Fr(11, 84), Fr(0)]
    return {
        "euler": lambda: _erk("euler", [[0]], [1], 1),
        "ssp-rk2": lambda: _erk(
            "ssp-rk2", [[0, 0], [1, 0]], [h, h], 2, b_hat=[1, 0], p_hat=1,
            bstar=[[1, -h], [0, h]],
        ),
        "ssp-rk3": lambda: _erk(
            "ssp-rk3",
            [[0, 0, 0], [1, 0, 0], [Fr(1, 4), Fr(1, 4), 0]],
            [Fr(1, 6), Fr(1, 6), Fr(2, 3)],
            3,
            b_hat=[h, h, 0],
            p_hat=2,
        ),
        "ssp-rk104": _ssp104,
        "bs3": lambda: _erk(
            "bs3",
            [[0, 0, 0, 0], [h, 0, 0, 0], [0, Fr(3, 4), 0, 0], bs3_b],
            bs3_b,
            3,
            b_hat=[Fr(7, 24), Fr(1, 4), Fr(1, 3), Fr(1, 8)],
            p_hat=2,
            bstar=_hermite_bstar([float(x) for x in bs3_b], 0, 3),
            fsal=True,
        ),
        "rk4": lambda: _erk(
            "rk4",
            [[0, 0, 0, 0], [h, 0, 0, 0], [0, h, 0, 0], [0, 0, 1, 0]],
            [Fr(1, 6), Fr(1, 3), Fr(1, 3), Fr(1, 6)],
            4,
        ),
        "dp5": lambda: _erk(
            "dp5",
            [
                [0] * 7,
                [Fr(1, 5)] + [0] * 6,
                [Fr(3, 40), Fr(9, 40)] + [0] * 5,
                [Fr(44, 45), Fr(-56, 15), Fr(32, 9)] + [0] * 4,
                [Fr(19372, 6561), Fr(-25360, 2187), Fr(64448, 6561), Fr(-212, 729), 0, 0, 0],
                [Fr(9017, 3168), Fr(-355, 33), Fr(46732, 5247), Fr(49, 176), Fr(-5103, 18656), 0, 0],
                dp5_b,
            ],
            dp5_b,
            5,
            b_hat=[Fr(5179, 57600), 0, Fr(7571, 16695), Fr(393, 640), Fr(-92097, 339200),
                   Fr(187, 2100), Fr(1, 40)],
            p_hat=4,
            bstar=_dp5_dense(dp5_b),
            fsal=True,
        ),
    }


def _imex(name, Ae, be, Ai, bi, p, be_hat=None, bi_hat=None, p_hat=None, bstar=None, sa=False):
    s = len(be)

    def full(M):
        out = [[Fr(0)] * s for _ in range(s)]
        for i, row in enumerate(M):
            for j, v in enumerate(row):
                out[i][j] = v
        return out

    Ae, Ai = full(Ae), full(Ai)
    ce = [sum(r) for r in Ae]
    ci = [sum(r) for r in Ai]
    E = ButcherTableau(f"{name}-explicit", _frozen(Ae, 2), _frozen(be), _frozen(ce), p,
                       _frozen(be_hat), p_hat, _frozen(bstar, 2) if bstar else None)
    I = ButcherTableau(f"{name}-implicit", _frozen(Ai, 2), _frozen(bi), _frozen(ci), p,
                       _frozen(bi_hat), p_hat, _frozen(bstar, 2) if bstar else None)
    return IMEXTableau(name, E, I, p, p_hat, sa)


def _ark3():
    # Kennedy & Carpenter ARK3(2)4L[2]SA
    g = Fr(1767732205903, 4055673282236)
    Ae = [
        [],
        [Fr(1767732205903, 2027836641118)],
        [Fr(5535828885825, 10492691773637), Fr(788022342437, 10882634858940)],
        [Fr(6485989280629, 16251701735622), Fr(-4246266847089, 9704473918619),
         Fr(10755448449292, 10357097424841)],
    ]
    b = [Fr(1471266399579, 7840856788654), Fr(-4482444167858, 7529755066697),
         Fr(11266239266428, 11593286722821), g]
    Ai = [
        [],
        [g, g],
        [Fr(2746238789719, 10658868560708), Fr(-640167445237, 6845629431997), g],
        b,
    ]
    b_hat = [Fr(2756255671327, 12835298489170), Fr(-10771552573575, 22201958757719),
             Fr(9247589265047, 10645013368117), Fr(2193209047091, 5459859503100)]
    bstar = [
        [Fr(4655552711362, 22874653954995), Fr(-215264564351, 13552729205753)],
        [Fr(-18682724506714, 9892148508045), Fr(17870216137069, 13817060693119)],
        [Fr(34259539580243, 13192909600954), Fr(-28141676662227, 17317692491321)],
        [Fr(584795268549, 6622622206610), Fr(2508943948391, 7218656332882)],
    ]
    return _imex("ark3", Ae, b, Ai, b, 3, b_hat, b_hat, 2, bstar, sa=True)


def _ark4():
    # Kennedy & Carpenter ARK4(3)6L[2]SA
    g = Fr(1, 4)
    Ae = [
        [],
        [Fr(1, 2)],
        [Fr(13861, 62500), Fr(6889, 62500)],
        [Fr(-116923316275, 2393684061468), Fr(-2731218467317, 15368042101831),
         Fr(9408046702089, 11113171139209)],
        [Fr(-451086348788, 2902428689909), Fr(-2682348792572, 7519795681897),
         Fr(12662868775082, 11960479115383), Fr(3355817975965, 11060851509271)],
        [Fr(647845179188, 3216320057751), Fr(73281519250, 8382639484533),
         Fr(552539513391, 3454668386233), Fr(3354512671639, 8306763924573), Fr(4040, 17871)],
    ]
    b = [Fr(82889, 524892), Fr(0), Fr(15625, 83664), Fr(69875, 102672), Fr(-2260, 8211), g]
    Ai = [
        [],
        [g, g],
        [Fr(8611, 62500), Fr(-1743, 31250), g],
        [Fr(5012029, 34652500), Fr(-654441, 2922500), Fr(174375, 388108), g],
        [Fr(15267082809, 155376265600), Fr(-71443401, 120774400), Fr(730878875, 902184768),
         Fr(2285395, 8070912), g],
        b,
    ]
    b_hat = [Fr(4586570599, 29645900160), Fr(0), Fr(178811875, 945068544),
             Fr(814220225, 1159782912), Fr(-3700637, 11593932), Fr(61727, 225920)]
    return _imex("ark4", Ae, b, Ai, b, 4, b_hat, b_hat, 3, sa=True)


def _imex_tableaux() -> dict[str, Callable[[], Any]]:
    h = Fr(1, 2)
    return {
        # Ascher, Ruuth & Spiteri (1,2,2): implicit-explicit midpoint
        "ars122": lambda: _imex(
            "ars122",
            [[], [h]], [0, 1],
            [[], [0, h]], [0, 1],
            2, [h, h], [h, h], 1,
            bstar=[[1, -1], [0, 1]],
        ),
        # Ascher, Ruuth & Spiteri (4,4,3)
        "ars443": lambda: _imex(
            "ars443",
            [[], [h], [Fr(11, 18), Fr(1, 18)], [Fr(5, 6), Fr(-5, 6), h],
             [Fr(1, 4), Fr(7, 4), Fr(3, 4), Fr(-7, 4)]],
            [Fr(1, 4), Fr(7, 4), Fr(3, 4), Fr(-7, 4), 0],
            [[], [0, h], [0, Fr(1, 6), h], [0, -h, h, h], [0, Fr(3, 2), Fr(-3, 2), h, h]],
            [0, Fr(3, 2), Fr(-3, 2), h, h],
            3,
            sa=True,
        ),
        "ark3": _ark3,
        "ark4": _ark4,
    }


def _ros(name, A, Gamma, b, b_hat, p, p_hat, w_method=False, l_stable=False, sa=False,
         allow_explicit_stages=False):
    A = _frozen(A, 2)
    Gamma = _frozen(Gamma, 2)
    b = _frozen(b)
    b_hat = _frozen(b_hat)
    omega, d, m, m_hat, gsum = ros_transform(Gamma, A, b, b_hat, allow_explicit_stages)
    tr = {"omega": omega, "d": d, "m": m, "m_hat": m_hat, "gamma_sums": gsum}
    for v in tr.values():
        if v is not None:
            v.setflags(write=False)
    return RosTableau(name, A, Gamma, b, b_hat, p, p_hat, w_method, l_stable, sa, tr)


def ros_tableau(name: str, A, Gamma, b, b_hat=None, p: int = 1, p_hat: int | None = None,
                w_method: bool = False) -> RosTableau:
    """Build a Rosenbrock tableau (transformed coefficients included)."""
    return _ros(name, A, Gamma, b, b_hat, p, p_hat, w_method=w_method)


def _from_kpp(g, A_kpp, C_kpp, M, E, s):
    """Rebuild (A, Gamma, b, b_hat) from coefficients published in the
    transformed form (A = omega, C = d, M = m, E = m - m_hat)."""
    omega = np.zeros((s, s))
    d = np.zeros((s, s))
    k = 0
    for i in range(1, s):
        for j in range(i):
            omega[i, j] = A_kpp[k]
            d[i, j] = C_kpp[k]
            k += 1
    Gamma, A, b = ros_untransform(omega, d, M, [g] * s)
    Gamma = np.tril(Gamma)
    A = np.tril(A, -1)
    Ginv = np.linalg.inv(Gamma)
    b_hat = (np.asarray(M) - np.asarray(E)) @ np.linalg.inv(Ginv)
    return A, Gamma, b, b_hat


def _sandu3():
    g = 0.43586652150845899941601945119356
    A, G, b, bh = _from_kpp(
        g,
        [1.0, 1.0, 0.0],
        [-0.10156171083877702091975600115545e01, 0.40759956452537699824805835358067e01,
         0.92076794298330791242156818474003e01],
        [1.0, 0.61697947043828245592553615689730e01, -0.42772256543218573326238373806514],
        [0.5, -0.29079558716805469821718236208017e01, 0.22354069897811569627360909276199],
        3,
    )
    return _ros("sandu3", A, G, b, bh, 3, 2, l_stable=True)


def _rodas3():
    # transformed form (A=omega, C=d, M=m, E=m-m_hat) of the four-stage,
    # stiffly accurate third-order method
    A = [[0, 0, 0, 0], [0, 0, 0, 0], [1, 0, 0, 0], [Fr(3, 4), Fr(-1, 4), Fr(1, 2), 0]]
    G = [[Fr(1, 2), 0, 0, 0], [1, Fr(1, 2), 0, 0], [Fr(-1, 4), Fr(-1, 4), Fr(1, 2), 0],
         [Fr(1, 12), Fr(1, 12), Fr(-2, 3), Fr(1, 2)]]
    b = [Fr(5, 6), Fr(-1, 6), Fr(-1, 6), Fr(1, 2)]
    b_hat = [Fr(3, 4), Fr(-1, 4), Fr(1, 2), 0]
    return _ros("rodas3", A, G, b, b_hat, 3, 2, l_stable=True, sa=True)


def _ros_tableaux() -> dict[str, Callable[[], Any]]:
    g = 4.3586652150845900e-01
    return {
        # Rang & Angermann ROS3Pw
        "ra3pw": lambda: _ros(
            "ra3pw",
            [[0, 0, 0], [1.5773502691896257e00, 0, 0], [0.5, 0, 0]],
            [[7.8867513459481287e-01, 0, 0],
             [-1.5773502691896257e00, 7.8867513459481287e-01, 0],
             [-6.7075317547305480e-01, -1.7075317547305482e-01, 7.8867513459481287e-01]],
            [1.0566243270259355e-01, 4.9038105676657971e-02, 8.4529946162074843e-01],
            [-1.7863279495408180e-01, 1.0 / 3.0, 8.4529946162074843e-01],
            3, 2, w_method=False,
        ),
        # Rang & Angermann ROS34PW2
        "ra34pw2": lambda: _ros(
            "ra34pw2",
            [[0, 0, 0, 0],
             [8.7173304301691801e-01, 0, 0, 0],
             [8.4457060015369423e-01, -1.1299064236484185e-01, 0, 0],
             [0, 0, 1.0, 0]],
            [[g, 0, 0, 0],
             [-8.7173304301691801e-01, g, 0, 0],
             [-9.0338057013044082e-01, 5.4180672388095326e-02, g, 0],
             [2.4212380706095346e-01, -1.2232505839045147e00, 5.4526025533510214e-01, g]],
            [2.4212380706095346e-01, -1.2232505839045147e00, 1.5452602553351020e00, g],
            [3.7810903145819369e-01, -9.6042292212423178e-02, 0.5, 2.1793326075422950e-01],
            3, 2, w_method=True, l_stable=True, sa=True,
        ),
        "rodas3": _rodas3,
        "sandu3": _sandu3,
    }


def _theta_entries() -> dict[str, Callable[[], Any]]:
    return {
        "beuler": lambda: ThetaMethod("beuler", 1.0),
        "cn": lambda: ThetaMethod("cn", 0.5),
        "theta": lambda: ThetaMethod("theta", 0.5),
    }


def _bdf_entries() -> dict[str, Callable[[], Any]]:
    return {f"bdf{k}": (lambda k=k: BDFMethod(f"bdf{k}", k)) for k in range(1, 7)}


_FACTORIES: dict[str, Callable[[], Any]] = {
    **_explicit_tableaux(),
    **_theta_entries(),
    **_imex_tableaux(),
    **_ros_tableaux(),
    **_bdf_entries(),
}

FAMILIES = {
    **{k: "rk" for k in _explicit_tableaux()},
    **{k: "theta" for k in _theta_entries()},
    **{k: "arkimex" for k in _imex_tableaux()},
    **{k: "rosw" for k in _ros_tableaux()},
    **{k: "bdf" for k in _bdf_entries()},
}


def available() -> list[str]:
    return sorted(_FACTORIES)


@lru_cache(maxsize=None)
def registry_get(name: str):
    """Return the (immutable) tableau registered under ``name``."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise UnknownSchemeError(name, available()) from None
    return factory()


def bdf_coefficients(times) -> np.ndarray:
    """Variable-step BDF weights alpha with u'(times[0]) ~ sum_j alpha_j u(times[j]).

    ``times[0]`` is the new point, the rest are history (any order). The weights
    are the derivatives at times[0] of the Lagrange basis polynomials, built
    from divided-difference products.
    """
    t = np.asarray(times, dtype=float)
    k = len(t) - 1
    if k < 1:
        raise ValueError("need at least two points")
    alpha = np.empty(k + 1)
    t0 = t[0]
    # basis l_0: derivative at its own node
    alpha[0] = sum(1.0 / (t0 - t[j]) for j in range(1, k + 1))
    for j in range(1, k + 1):
        num = 1.0
        for m in range(1, k + 1):
            if m != j:
                num *= (t0 - t[m]) / (t[j] - t[m])
        alpha[j] = num / (t[j] - t0)
    return alpha


# ---------------------------------------------------------------------------
# JSON dump


def _arr(x):
    return None if x is None else np.asarray(x).tolist()


def tableau_to_dict(tab) -> dict:
    name = tab.name
    if isinstance(tab, ButcherTableau):
        return {"name": name, "family": "rk", "A": _arr(tab.A), "b": _arr(tab.b),
                "c": _arr(tab.c), "b_hat": _arr(tab.b_hat), "order": tab.p,
                "embedded_order": tab.p_hat, "bstar": _arr(tab.bstar)}
    if isinstance(tab, IMEXTableau):
        return {"name": name, "family": "arkimex", "order": tab.p,
                "embedded_order": tab.p_hat, "stiffly_accurate": tab.stiffly_accurate,
                "explicit": tableau_to_dict(tab.explicit),
                "implicit": tableau_to_dict(tab.implicit)}
    if isinstance(tab, RosTableau):
        return {"name": name, "family": "rosw", "A": _arr(tab.A), "Gamma": _arr(tab.Gamma),
                "b": _arr(tab.b), "b_hat": _arr(tab.b_hat), "c": _arr(tab.c),
                "order": tab.p, "embedded_order": tab.p_hat, "w_method": tab.w_method,
                "l_stable": tab.l_stable}
    if isinstance(tab, ThetaMethod):
        return {"name": name, "family": "theta", "theta": tab.theta, "order": tab.p}
    if isinstance(tab, BDFMethod):
        return {"name": name, "family": "bdf", "order": tab.order}
    raise TypeError(type(tab).__name__)


def tableau_to_json(tab, indent: int | None = 2) -> str:
    return json.dumps(tableau_to_dict(tab), indent=indent)
