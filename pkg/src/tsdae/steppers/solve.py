"""Outer integration loop: step, control, events, observers, final time."""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from ..adapt import AdaptConfig, AdaptKind, Controller, weighted_error_norm
from ..core import (
    FinalTimePolicy,
    ProblemError,
    ProblemSpec,
    SolveOptions,
    StepFailure,
    ToleranceSpec,
    check_finite,
)
from ..events import EventRecord, EventSpec, EventState, handle_post_event, locate_event, scan_events
from .base import Counters, NewtonFailure, Stepper, StepOutcome


class Termination(enum.Enum):
    REACHED_MAX_TIME = "ReachedMaxTime"
    REACHED_MAX_STEPS = "ReachedMaxSteps"
    EVENT_TERMINATED = "EventTerminated"
    DIVERGED = "Diverged"


@dataclass
class AdaptLogEntry:
    t: float
    dt: float
    werr: float
    accept: bool
    next_dt: float
    estimated: bool = True


@dataclass
class SolveResult:
    final_t: float
    final_u: np.ndarray
    steps_taken: int
    steps_rejected: int
    counters: Counters
    termination: Termination
    events: list[EventRecord] = field(default_factory=list)
    adapt_log: list[AdaptLogEntry] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    message: str = ""
    last_outcome: StepOutcome | None = field(default=None, repr=False)

    def summary_dict(self) -> dict:
        return {
            "final_t": self.final_t,
            "final_u": [float(x) for x in self.final_u],
            "steps_taken": self.steps_taken,
            "steps_rejected": self.steps_rejected,
            "counters": self.counters.as_dict(),
            "termination": self.termination.value,
        }


@dataclass
class StepInfo:
    """What observers see for each step attempt."""

    step_index: int
    t: float
    dt: float
    accepted: bool
    werr: float
    newton_iters: int
    linear_iters: int
    event_ids: tuple[int, ...]
    u: np.ndarray | None


def _end_reached(t: float, t_end: float, dt: float) -> bool:
    return t >= t_end - 1e-12 * max(abs(t_end), abs(dt))


def solve(
    p: ProblemSpec,
    stepper: Stepper,
    u0,
    opts: SolveOptions,
    tol: ToleranceSpec | None = None,
    adapt: AdaptConfig | None = None,
    events: EventSpec | None = None,
    monitors: Sequence[Callable[[StepInfo], None]] = (),
    hooks: Sequence[Callable] = (),
    trajectory=None,
    keep_states: bool = False,
) -> SolveResult:
    """Integrate from ``opts.t0`` to ``opts.max_time``.

    ``hooks`` are called as ``hook(t_n, u_n, dt, outcome)`` after every
    accepted step (before event truncation); ``trajectory`` receives
    ``set(step_index, t, u, stage_data)``.  Monitors get a :class:`StepInfo`
    per attempt, rejected ones included.
    """
    adapt = adapt or AdaptConfig(kind=AdaptKind.NONE)
    if adapt.kind is not AdaptKind.NONE:
        if tol is None:
            raise ProblemError("adaptive stepping needs a ToleranceSpec")
        if not stepper.has_error_estimate:
            raise ProblemError(f"{stepper.name} has no error estimator; use --adapt none")
    u = check_finite(np.array(u0, dtype=float), "initial state")
    if u.shape != (p.dim,):
        raise ProblemError(f"initial state has shape {u.shape}, expected ({p.dim},)")

    ctl = Controller(adapt)
    stepper.reset()
    counters = stepper.counters
    t = float(opts.t0)
    t_end = float(opts.max_time)
    dt = float(opts.dt0)
    policy = opts.final_time_policy
    res = SolveResult(t, u.copy(), 0, 0, counters, Termination.REACHED_MAX_TIME)
    res.times.append(t)
    if keep_states:
        res.states.append(u.copy())
    ev = EventState(events) if events is not None and events.nevents > 0 else None
    if ev is not None:
        ev.start(t, u)
    if trajectory is not None:
        trajectory.set(0, t, u, None)

    steps = 0
    just_rejected = False
    resync_dt: float | None = None
    planned_dt: float | None = None
    consecutive_fail = 0
    final_outcome = None

    def emit(info: StepInfo):
        for m in monitors:
            m(info)

    while True:
        if _end_reached(t, t_end, dt):
            res.termination = Termination.REACHED_MAX_TIME
            break
        if steps >= opts.max_steps:
            res.termination = Termination.REACHED_MAX_STEPS
            break
        dt_try = resync_dt if resync_dt is not None else dt
        matched = False
        if policy is FinalTimePolicy.MATCHSTEP and t + dt_try >= t_end:
            dt_try = t_end - t
            matched = True
        if not dt_try > 0 or t + dt_try == t:
            res.termination = Termination.DIVERGED
            res.message = f"step size underflow at t={t!r}"
            break

        try:
            out = stepper.step(t, u, dt_try)
        except StepFailure as exc:
            consecutive_fail += 1
            if not isinstance(exc, NewtonFailure):
                counters.nonlinear_failures += 1  # poisoned evaluation or singular matrix
            emit(StepInfo(steps + 1, t + dt_try, dt_try, False, math.nan, 0, 0, (), None))
            limit = opts.max_nonlinear_failures
            if (
                adapt.kind is AdaptKind.NONE
                or (limit is not None and counters.nonlinear_failures > limit)
                or consecutive_fail > 200
            ):
                res.termination = Termination.DIVERGED
                res.message = str(exc)
                break
            counters.rejected_steps += 1
            res.steps_rejected += 1
            just_rejected = True
            resync_dt = None
            dt = dt_try * adapt.reject_factor
            continue

        # error control
        estimated = out.err_estimate is not None
        if adapt.kind is AdaptKind.NONE:
            werr = math.nan if not estimated else _werr(out, tol, adapt) if tol else math.nan
            accept, next_dt = True, dt_try
        elif estimated:
            werr = _werr(out, tol, adapt)
            dec = ctl.decide(werr, stepper.control_order(out), dt_try, just_rejected)
            accept, next_dt = dec.accept, dec.next_dt
        else:
            werr, accept, next_dt = 0.0, True, dt_try
        res.adapt_log.append(AdaptLogEntry(t, dt_try, werr, accept, next_dt, estimated))

        if not accept:
            counters.rejected_steps += 1
            res.steps_rejected += 1
            stepper.reject(out)
            emit(StepInfo(steps + 1, t + dt_try, dt_try, False, werr,
                          out.nonlinear_iters, out.linear_iters, (), None))
            just_rejected = True
            resync_dt = None
            dt = next_dt
            continue

        consecutive_fail = 0
        just_rejected = False
        stepper.accept(out)
        t_new = t_end if matched else out.t_new
        u_new = out.u_new
        for hk in hooks:
            hk(t, u, dt_try, out)

        fired: list[EventRecord] = []
        terminate = False
        if ev is not None:
            h_next = events.evaluate(t_new, u_new)
            t_a, h_a = _rearm(events, ev, stepper, out, t, t_new)
            cands = scan_events(events, t, h_a, t_new, h_next, ev.armed)
            if cands:
                recs = [
                    locate_event(events, lambda tq: stepper.interpolate(out, tq), (t_a[i], t_new),
                                 i, h_a[i], h_next[i])
                    for i in cands
                ]
                t_min = min(r.t_star for r in recs)
                slack = 4 * np.finfo(float).eps * max(abs(t_min), 1.0)
                fired = [r for r in recs if r.t_star <= t_min + slack]
                t_star = t_min
                u_star = next(r.u_star for r in fired if r.t_star == t_min)
                u_after, terminate = handle_post_event(events, fired, t_star, u_star)
                res.events.extend(fired)
                ev.log.extend(fired)
                for r in fired:
                    ev.armed[r.event_id] = False
                planned_dt = next_dt if resync_dt is None else planned_dt
                step_dt = t_star - t
                remaining = t_new - t_star
                t_new, u_new = t_star, u_after
                stepper.reset()
                ev.refresh(events.evaluate(t_new, u_new))
                ev.armed[[r.event_id for r in fired]] = False
                resync_dt = remaining if remaining > 4 * np.finfo(float).eps * abs(t_new) else None
                if resync_dt is None:
                    next_dt = planned_dt
            else:
                ev.refresh(h_next)
                step_dt = t_new - t
                if resync_dt is not None:
                    next_dt = planned_dt
                    resync_dt = None
        else:
            step_dt = t_new - t

        steps += 1
        res.steps_taken = steps
        if trajectory is not None:
            trajectory.set(steps, t_new, u_new, out.stage_data)
        emit(StepInfo(steps, t_new, step_dt, True, werr, out.nonlinear_iters, out.linear_iters,
                      tuple(r.event_id for r in fired), u_new))
        t, u, dt = t_new, u_new, next_dt
        final_outcome = out
        res.times.append(t)
        if keep_states:
            res.states.append(np.array(u, copy=True))
        if terminate:
            res.termination = Termination.EVENT_TERMINATED
            break

    res.final_t, res.final_u = t, np.array(u, copy=True)
    res.last_outcome = final_outcome
    if (
        policy is FinalTimePolicy.INTERPOLATE
        and final_outcome is not None
        and res.termination is Termination.REACHED_MAX_TIME
        and t > t_end
        and final_outcome.t <= t_end
    ):
        res.final_u = stepper.interpolate(final_outcome, t_end)
        res.final_t = t_end
    return res


def _werr(out: StepOutcome, tol: ToleranceSpec, adapt: AdaptConfig) -> float:
    u1 = out.u_new
    return weighted_error_norm(u1, u1 - out.err_estimate, tol, adapt.norm)


REARM_SAMPLES = 8


def _rearm(events, ev, stepper, out, t, t_new):
    """Per-event bracket starts for this step.

    An event that fired at ``t`` stays disarmed until ``|h| > tol``.  Checking
    only step endpoints would let one long step leave the band and return to
    it unseen, so disarmed events are sampled on the dense output and the
    bracket starts at the first sample outside the band.
    """
    t_a = np.full(events.nevents, t)
    h_a = np.array(ev.h_prev, dtype=float)
    if ev.armed.all():
        return t_a, h_a
    for j in range(1, REARM_SAMPLES):
        tq = t + (t_new - t) * j / REARM_SAMPLES
        hq = events.evaluate(tq, stepper.interpolate(out, tq))
        fresh = ~ev.armed & (np.abs(hq) > events.tol)
        t_a[fresh] = tq
        h_a[fresh] = hq[fresh]
        ev.armed |= fresh
        if ev.armed.all():
            break
    return t_a, h_a
