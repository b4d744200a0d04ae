"""Zero-crossing detection and location on dense output."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

EPS = np.finfo(float).eps
MAX_ITER = 50


@dataclass
class EventSpec:
    """``h(t, u) -> array[nevents]``.  ``post_event(ids, t, u, forward)``
    returns the (possibly modified) state or ``None`` to keep it."""

    nevents: int
    h: Callable
    direction: np.ndarray | list | int = 0
    terminate: np.ndarray | list | bool = False
    tol: np.ndarray | list | float = 1e-10
    post_event: Callable | None = None

    def __post_init__(self):
        n = self.nevents
        self.direction = np.broadcast_to(np.asarray(self.direction, dtype=int), (n,)).copy()
        self.terminate = np.broadcast_to(np.asarray(self.terminate, dtype=bool), (n,)).copy()
        self.tol = np.broadcast_to(np.asarray(self.tol, dtype=float), (n,)).copy()
        if n < 0:
            raise ValueError("nevents must be >= 0")
        if not np.all(np.isin(self.direction, (-1, 0, 1))):
            raise ValueError("direction entries must be -1, 0 or +1")
        if np.any(self.tol <= 0):
            raise ValueError("event tolerances must be positive")

    def evaluate(self, t: float, u) -> np.ndarray:
        v = np.asarray(self.h(t, u), dtype=float).reshape(self.nevents)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite event function value at t={t!r}")
        return v


@dataclass
class EventRecord:
    event_id: int
    t_star: float
    u_star: np.ndarray
    h_value_at_t_star: float
    iterations: int
    bisection: bool = False


def scan_events(spec: EventSpec, t_n: float, h_n, t_next: float, h_next,
                armed=None) -> list[int]:
    """Indices whose event function changes sign in the matching direction.

    A value that is exactly zero at ``t_n`` is a previous event boundary and
    is not re-detected; ``armed`` masks events still inside their re-arm band.
    """
    h_n = np.asarray(h_n, dtype=float)
    h_next = np.asarray(h_next, dtype=float)
    out = []
    for i in range(spec.nevents):
        if armed is not None and not armed[i]:
            continue
        a, b = h_n[i], h_next[i]
        if a == 0.0:
            continue
        if not (a * b < 0.0 or b == 0.0):
            continue
        rising = b > a
        d = spec.direction[i]
        if d == 0 or (d > 0 and rising) or (d < 0 and not rising):
            out.append(i)
    return out


def locate_event(spec: EventSpec, interpolant: Callable, bracket: tuple[float, float],
                 event_id: int, h_a: float | None = None, h_b: float | None = None) -> EventRecord:
    """Anderson-Bjorck false position on ``t -> h(t, interpolant(t))``.

    Falls back to bisection after ``MAX_ITER`` iterations; stops when
    ``|h| <= tol`` or the bracket is narrower than ``4 eps |t|``.
    """
    tol = spec.tol[event_id]
    x0, x1 = float(bracket[0]), float(bracket[1])

    def g(t):
        u = interpolant(t)
        return spec.evaluate(t, u)[event_id], u

    f0 = g(x0)[0] if h_a is None else h_a
    if h_b is None:
        f1, u1 = g(x1)
    else:
        f1, u1 = h_b, interpolant(x1)
    if abs(f1) <= tol:
        return EventRecord(event_id, x1, u1, f1, 0)
    if f0 * f1 > 0:
        raise ValueError("event is not bracketed")
    it = 0
    bis = False
    while True:
        it += 1
        lo, hi = min(x0, x1), max(x0, x1)
        if it > MAX_ITER:
            bis = True
            c = lo + 0.5 * (hi - lo)
        else:
            c = x1 - f1 * (x1 - x0) / (f1 - f0)
            if not lo < c < hi:
                c = lo + 0.5 * (hi - lo)
        fc, uc = g(c)
        if abs(fc) <= tol or hi - lo <= 4 * EPS * max(abs(lo), abs(hi)):
            return EventRecord(event_id, c, uc, fc, it, bis)
        if fc * f1 < 0:
            x0, f0 = x1, f1
        else:
            # Anderson-Bjorck: shrink the value kept at the stale endpoint
            m = 1.0 - fc / f1
            f0 *= m if m > 0 else 0.5
        x1, f1 = c, fc


@dataclass
class EventState:
    """Per-integration bookkeeping: last values and re-arm band."""

    spec: EventSpec
    h_prev: np.ndarray | None = None
    armed: np.ndarray | None = None
    log: list[EventRecord] = field(default_factory=list)

    def start(self, t, u):
        self.h_prev = self.spec.evaluate(t, u)
        self.armed = np.abs(self.h_prev) > self.spec.tol

    def refresh(self, h):
        self.h_prev = h
        self.armed = self.armed | (np.abs(h) > self.spec.tol)


def handle_post_event(spec: EventSpec, records: list[EventRecord], t_star: float, u_star):
    """Apply the user handler; returns ``(u_new, terminate)``."""
    ids = [r.event_id for r in records]
    u_new = np.array(u_star, dtype=float, copy=True)
    if spec.post_event is not None:
        res = spec.post_event(ids, t_star, u_new, True)
        if res is not None:
            u_new = np.asarray(res, dtype=float)
    terminate = bool(np.any(spec.terminate[ids]))
    return u_new, terminate
