"""Command-line front end: ``tsdae <command> [flags]``.

Exit codes: 0 success, 1 configuration error, 2 divergence, 3 failed check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass

import numpy as np

from .adapt import AdaptConfig
from .core import FinalTimePolicy, ProblemError, SolveOptions, ToleranceSpec
from .monitor import FileSink, SolveConfig, attach_monitor, view_summary
from .newton import NewtonOptions
from .problems import LIBRARY, ProblemInstance, get_problem
from .sensitivity import (
    AdjointState,
    Binomial,
    StoreAll,
    Trajectory,
    adjoint_solve,
    forward_solve,
    total_derivative,
)
from .steppers import make_stepper, parse_scheme
from .steppers.solve import SolveResult, Termination, solve
from .tableaux import BDFMethod, available, check_order_conditions, registry_get, tableau_to_dict

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _params(text: str | None) -> dict[str, float]:
    out: dict[str, float] = {}
    if not text:
        return out
    for item in text.split(","):
        if not item.strip():
            continue
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--seed-params entries must look like name=value, got {item!r}")
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise ConfigError(f"parameter {key.strip()!r} needs a number, got {val!r}") from None
    return out


# shared setup -----------------------------------------------------------------


@dataclass
class Setup:
    inst: ProblemInstance
    scheme: str
    scheme_opts: dict
    opts: SolveOptions
    tol: ToleranceSpec | None
    adapt: AdaptConfig
    defaults: dict

    def stepper(self, scheme: str | None = None, **extra):
        scheme = scheme or self.scheme
        kw = dict(self.scheme_opts) if scheme == self.scheme else _scheme_opts(scheme, self.defaults)
        kw.update(extra)
        return make_stepper(self.inst.problem, scheme, **kw)


def _scheme_opts(scheme: str, defaults: dict | None, fully_implicit=None, starter=None) -> dict:
    family, _ = parse_scheme(scheme)
    opts: dict = {}
    if defaults and family == "arkimex":
        opts.update(defaults.get("scheme_opts", {}))
    if fully_implicit is not None and family == "arkimex":
        opts["fully_implicit"] = fully_implicit
    if family == "bdf":
        opts["starter"] = starter or "rosw:rodas3"
    return opts


def _setup(args) -> Setup:
    entry = get_problem(args.problem)
    d = dict(entry.defaults)
    inst = entry.build(**_params(args.seed_params))
    scheme = args.scheme or d["scheme"]
    sopts = _scheme_opts(scheme, d, args.fully_implicit, getattr(args, "starter", None))
    policy = args.final_time or d["final_time"]
    opts = SolveOptions(
        t0=0.0,
        dt0=args.dt if args.dt is not None else d["dt"],
        max_steps=args.max_steps if args.max_steps is not None else d["max_steps"],
        max_time=args.max_time if args.max_time is not None else d["max_time"],
        final_time_policy=FinalTimePolicy(policy),
    )
    adapt = AdaptConfig(kind=args.adapt or d["adapt"])
    rtol = args.rtol if args.rtol is not None else d["rtol"]
    atol = _floats(args.atol) if args.atol is not None else d["atol"]
    atol = np.asarray(atol, dtype=float)
    if atol.ndim and atol.size == 1:
        atol = float(atol[0])
    elif atol.ndim and atol.size != inst.problem.dim:
        raise ConfigError(f"--atol has {atol.size} entries, problem has {inst.problem.dim} unknowns")
    tol = ToleranceSpec(atol=atol, rtol=rtol)
    return Setup(inst, scheme, sopts, opts, tol, adapt, d)


def _common(p: argparse.ArgumentParser, scheme_help="family:name, e.g. rosw:ra34pw2"):
    p.add_argument("--problem", required=True, help=f"one of {', '.join(LIBRARY)}")
    p.add_argument("--scheme", help=scheme_help)
    p.add_argument("--dt", type=float, help="initial (or fixed) step size")
    p.add_argument("--max-time", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", help="scalar or comma-separated per-component list")
    p.add_argument("--adapt", choices=("none", "basic", "dsp"))
    p.add_argument("--final-time", choices=("stepover", "interpolate", "matchstep"))
    p.add_argument("--seed-params", help="problem parameters, name=value,...")
    p.add_argument("--fully-implicit", action=argparse.BooleanOptionalAction, default=None,
                   help="treat every term implicitly in ARK-IMEX schemes")


def _write_json(obj, path):
    text = json.dumps(obj, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _result_json(res: SolveResult) -> dict:
    return res.summary_dict()


def _run(setup: Setup, stepper, monitors=(), events=None, **kw) -> SolveResult:
    return solve(setup.inst.problem, stepper, setup.inst.u0, setup.opts, setup.tol, setup.adapt,
                 events, monitors=list(monitors), **kw)


# commands ---------------------------------------------------------------------


def cmd_solve(args) -> int:
    s = _setup(args)
    st = s.stepper()
    cfg = SolveConfig(s.inst.problem, st, s.opts, s.tol, s.adapt)
    sink = None
    if args.monitor:
        sink = FileSink(args.monitor, dim=s.inst.problem.dim if args.snapshot else None)
        attach_monitor(cfg, sink, every_k=args.every_k, snapshot=args.snapshot)
    try:
        res = cfg.run(s.inst.u0)
    finally:
        if sink is not None:
            sink.close()
    out = _result_json(res)
    if s.inst.exact is not None:
        out["error_vs_exact"] = float(np.max(np.abs(res.final_u - s.inst.exact(res.final_t))))
    _write_json(out, args.output)
    if args.view:
        sys.stderr.write(view_summary(res, cfg))
    if res.termination is Termination.DIVERGED:
        print(f"diverged: {res.message}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


SWEEP_COLUMNS = ("scheme", "tolerance", "error_vs_reference", "steps", "rhs_evals",
                 "newton_iters", "wall_time")


def sweep(setup: Setup, schemes: list[str], tols: list[float], reference_scheme: str | None = None):
    """Rows of (scheme, tol, error, steps, rhs_evals, newton_iters, wall_time)
    and the reference state."""
    if len(tols) < 2:
        raise ConfigError("a sweep needs at least two tolerances")
    if math.log10(max(tols) / min(tols)) < 2 - 1e-12:
        raise ConfigError("sweep tolerances must span at least two decades")
    schemes = list(dict.fromkeys(schemes))
    big_opts = SolveOptions(t0=setup.opts.t0, dt0=setup.opts.dt0, max_steps=10**7,
                            max_time=setup.opts.max_time,
                            final_time_policy=FinalTimePolicy.INTERPOLATE)
    ref_tol = min(tols) / 100.0
    ref_st = setup.stepper(reference_scheme or schemes[0])
    ref = solve(setup.inst.problem, ref_st, setup.inst.u0, big_opts, ToleranceSpec(ref_tol, ref_tol),
                setup.adapt)
    if ref.termination is not Termination.REACHED_MAX_TIME:
        raise RuntimeError(f"reference solve failed: {ref.termination.value} {ref.message}")
    scale = np.where(ref.final_u != 0, np.abs(ref.final_u), 1.0)
    # errors are only comparable at the reference time, so never step past it
    policy = setup.opts.final_time_policy
    if policy is FinalTimePolicy.STEPOVER:
        policy = FinalTimePolicy.INTERPOLATE
    run_opts = SolveOptions(t0=setup.opts.t0, dt0=setup.opts.dt0, max_steps=setup.opts.max_steps,
                            max_time=setup.opts.max_time, final_time_policy=policy)
    rows = []
    for sch in schemes:
        for tol in sorted(tols, reverse=True):
            st = setup.stepper(sch)
            w0 = time.perf_counter()
            r = solve(setup.inst.problem, st, setup.inst.u0, run_opts, ToleranceSpec(tol, tol),
                      setup.adapt)
            wall = time.perf_counter() - w0
            if r.termination is Termination.DIVERGED:
                err = math.inf
            else:
                err = float(np.max(np.abs(r.final_u - ref.final_u) / scale))
            rows.append((sch, tol, err, r.steps_taken, r.counters.rhs_evals,
                         r.counters.nonlinear_iters, wall))
    return rows, ref


def cmd_sweep(args) -> int:
    s = _setup(args)
    schemes = [x.strip() for x in (args.schemes or s.scheme).split(",") if x.strip()]
    tols = _floats(args.tols)
    if not args.max_steps:
        s.opts = SolveOptions(t0=s.opts.t0, dt0=s.opts.dt0, max_steps=10**7,
                              max_time=s.opts.max_time, final_time_policy=s.opts.final_time_policy)
    if s.adapt.kind.value == "none":
        raise ConfigError("a work-precision sweep needs an adaptive controller")
    rows, _ = sweep(s, schemes, tols, args.reference_scheme)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for sch, tol, err, steps, rhs, newt, wall in rows:
        w.writerow([sch, format(tol, ".17g"), format(err, ".17g"), steps, rhs, newt, f"{wall:.6f}"])
    _emit_text(buf.getvalue(), args.output)
    return EXIT_OK


def _emit_text(text: str, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def order_study(setup: Setup, dts: list[float], scheme: str | None = None):
    """Fixed-step errors at the final time and log2 error ratios."""
    if len(dts) < 2:
        raise ConfigError("an order study needs at least two step sizes")
    dts = sorted(dts, reverse=True)
    T = setup.opts.max_time
    opts = SolveOptions(t0=setup.opts.t0, dt0=dts[0], max_time=T, max_steps=10**7,
                        final_time_policy=FinalTimePolicy.MATCHSTEP)
    exact = setup.inst.exact
    ref = None
    if exact is None:
        st = setup.stepper(scheme)
        ref_opts = SolveOptions(t0=opts.t0, dt0=dts[-1] / 8, max_time=T, max_steps=10**8,
                                final_time_policy=FinalTimePolicy.MATCHSTEP)
        ref = solve(setup.inst.problem, st, setup.inst.u0, ref_opts).final_u
    errs = []
    declared = None
    for dt in dts:
        st = setup.stepper(scheme)
        declared = st.order
        o = SolveOptions(t0=opts.t0, dt0=dt, max_time=T, max_steps=10**7,
                         final_time_policy=FinalTimePolicy.MATCHSTEP)
        r = solve(setup.inst.problem, st, setup.inst.u0, o)
        if r.termination is not Termination.REACHED_MAX_TIME:
            raise RuntimeError(f"fixed-step run with dt={dt} ended with {r.termination.value}")
        target = exact(r.final_t) if exact is not None else ref
        errs.append(float(np.max(np.abs(r.final_u - target))))
    observed = [
        math.log(errs[i] / errs[i + 1]) / math.log(dts[i] / dts[i + 1]) for i in range(len(dts) - 1)
    ]
    return dts, errs, observed, declared


def cmd_order(args) -> int:
    s = _setup(args)
    if args.dts:
        dts = _floats(args.dts)
    else:
        base = args.dt if args.dt is not None else s.opts.dt0
        dts = [base / 2**i for i in range(args.levels)]
    dts, errs, observed, declared = order_study(s, dts)
    lines = [f"scheme {s.scheme}: declared order {declared}", "dt,error,observed"]
    for i, (dt, e) in enumerate(zip(dts, errs)):
        obs = "" if i == 0 else format(observed[i - 1], ".4f")
        lines.append(f"{dt:.17g},{e:.17g},{obs}")
    lines.append(f"observed order (finest interval): {observed[-1]:.4f}")
    if len(observed) >= 3 and np.std(observed) > 0.5:
        print("warning: error ratios are erratic; the problem may not be smooth "
              "or the errors may be at rounding level", file=sys.stderr)
    _emit_text("\n".join(lines) + "\n", args.output)
    return EXIT_OK


def adjoint_check(setup: Setup, objective: str, checkpoints: int | None = None,
                  fd_step: float = 1e-6) -> dict:
    inst = setup.inst
    p = inst.problem
    if objective not in inst.objectives:
        raise ConfigError(
            f"problem {p.name!r} has no objective {objective!r}; available: {sorted(inst.objectives)}"
        )
    obj = inst.objectives[objective]
    family, _ = parse_scheme(setup.scheme)
    if family not in ("rk", "theta"):
        raise ConfigError(f"adjoints are available for rk and theta schemes, not {family!r}")
    newton = NewtonOptions(rel_tol=1e-13, abs_tol=1e-14, max_it=50)
    opts = SolveOptions(t0=setup.opts.t0, dt0=setup.opts.dt0, max_time=setup.opts.max_time,
                        max_steps=10**7, final_time_policy=FinalTimePolicy.MATCHSTEP)

    def stepper(prob):
        kw = {"newton": newton} if family == "theta" else {}
        return make_stepper(prob, setup.scheme, **kw)

    traj = Trajectory(Binomial(checkpoints) if checkpoints else StoreAll())
    st = stepper(p)
    res = solve(p, st, inst.u0, opts, trajectory=traj)
    uN = res.final_u
    npar = p.nparams
    term = AdjointState([obj.phi_u(uN)], [np.zeros(npar)] if npar else None)
    adj = adjoint_solve(p, st, traj, term)
    lam0 = adj.lam[0]
    mu0 = adj.mu[0] if adj.mu is not None else np.zeros(0)

    _, fs_u = forward_solve(p, stepper(p), inst.u0, opts, np.eye(p.dim), with_params=False)
    fwd_u = total_derivative(obj.phi_u(uN), np.zeros(p.dim), fs_u)
    fwd_p = np.zeros(0)
    if npar:
        _, fs_p = forward_solve(p, stepper(p), inst.u0, opts, np.zeros((p.dim, npar)))
        fwd_p = total_derivative(obj.phi_u(uN), np.zeros(npar), fs_p)

    def psi(u0, prob=p):
        return obj.phi(solve(prob, stepper(prob), u0, opts).final_u)

    fd_u = np.empty(p.dim)
    for j in range(p.dim):
        d = fd_step * max(1.0, abs(inst.u0[j]))
        e = np.zeros(p.dim)
        e[j] = d
        fd_u[j] = (psi(inst.u0 + e) - psi(inst.u0 - e)) / (2 * d)
    fd_p = np.empty(npar)
    pnames = list(inst.param_names)
    entry = get_problem(p.name)
    for j, name in enumerate(pnames):
        d = fd_step * max(1.0, abs(inst.params[name]))
        vals = []
        for sgn in (1, -1):
            pp = dict(inst.params)
            pp[name] += sgn * d
            q = entry.builder(pp)
            vals.append(psi(q.u0, q.problem))
        fd_p[j] = (vals[0] - vals[1]) / (2 * d)

    def rel(a, b):
        a, b = np.concatenate([np.ravel(x) for x in a]), np.concatenate([np.ravel(x) for x in b])
        denom = max(np.max(np.abs(b)), np.finfo(float).tiny) if b.size else 1.0
        return float(np.max(np.abs(a - b)) / denom) if b.size else 0.0

    return {
        "scheme": setup.scheme,
        "objective": objective,
        "steps": res.steps_taken,
        "lambda0": lam0.tolist(),
        "mu0": mu0.tolist(),
        "forward_u0": fwd_u.tolist(),
        "forward_p": fwd_p.tolist(),
        "fd_u0": fd_u.tolist(),
        "fd_p": fd_p.tolist(),
        "param_names": pnames,
        "adjoint_vs_fd": rel((lam0, mu0), (fd_u, fd_p)),
        "adjoint_vs_forward": rel((lam0, mu0), (fwd_u, fwd_p)),
        "forward_vs_fd": rel((fwd_u, fwd_p), (fd_u, fd_p)),
        "recomputed_steps": traj.recomputed_steps,
    }


def cmd_adjoint_check(args) -> int:
    s = _setup(args)
    if args.scheme is None:
        s.scheme = "theta:1"
    rep = adjoint_check(s, args.objective, args.checkpoints)
    _write_json(rep, args.output)
    ok = rep["adjoint_vs_forward"] <= 1e-8 and rep["adjoint_vs_fd"] <= 1e-4
    return EXIT_OK if ok else EXIT_CHECK


def cmd_events(args) -> int:
    s = _setup(args)
    ev = s.inst.events
    st = s.stepper()
    res = _run(s, st, events=ev, keep_states=True)
    n = s.inst.problem.dim
    ucols = [f"u{i}" for i in range(n)]
    traj = io.StringIO()
    w = csv.writer(traj, lineterminator="\n")
    w.writerow(["t", *ucols])
    for t, u in zip(res.times, res.states):
        w.writerow([format(t, ".17g"), *(format(float(x), ".17g") for x in u)])
    evs = io.StringIO()
    w = csv.writer(evs, lineterminator="\n")
    w.writerow(["event_id", "t", *ucols, "h"])
    for r in res.events:
        w.writerow([r.event_id, format(r.t_star, ".17g"),
                    *(format(float(x), ".17g") for x in r.u_star), format(r.h_value_at_t_star, ".17g")])
    _emit_text(traj.getvalue(), args.trajectory)
    if args.events_out:
        _emit_text(evs.getvalue(), args.events_out)
    elif args.trajectory not in (None, "-"):
        sys.stdout.write(evs.getvalue())
    if args.output:
        _write_json(_result_json(res), args.output)
    return EXIT_DIVERGED if res.termination is Termination.DIVERGED else EXIT_OK


def cmd_tableau(args) -> int:
    if args.list or not args.name:
        sys.stdout.write("\n".join(available()) + "\n")
        return EXIT_OK
    tab = registry_get(args.name)
    out = tableau_to_dict(tab)
    if args.check and not isinstance(tab, BDFMethod):
        out["order_residuals"] = {k: float(v) for k, v in check_order_conditions(tab)}
    _write_json(out, args.output)
    return EXIT_OK


def cmd_problems(args) -> int:
    for name, e in LIBRARY.items():
        params = ", ".join(f"{k}={v:g}" for k, v in e.param_schema.items())
        sys.stdout.write(f"{name}: {e.description} [{params}] default scheme {e.defaults['scheme']}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tsdae", description="ODE/DAE time integration toolkit")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="integrate one problem")
    _common(p)
    p.add_argument("--monitor", help="per-step log, .csv or .jsonl")
    p.add_argument("--snapshot", action="store_true", help="include states in the monitor log")
    p.add_argument("--every-k", type=int, default=1)
    p.add_argument("--output", "-o", help="result JSON path (default stdout)")
    p.add_argument("--view", action="store_true", help="print a solver summary to stderr")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="work-precision sweep against a tight self-reference")
    _common(p)
    p.add_argument("--schemes", help="comma-separated scheme list")
    p.add_argument("--tols", required=True, help="comma-separated tolerances (rtol = atol)")
    p.add_argument("--reference-scheme")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("order", help="fixed-step convergence order study")
    _common(p)
    p.add_argument("--dts", help="comma-separated step sizes")
    p.add_argument("--levels", type=int, default=4, help="number of halvings of --dt")
    p.add_argument("--starter", help="one-step scheme used to start BDF")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_order)

    p = sub.add_parser("adjoint-check", help="compare adjoint, forward and finite-difference gradients")
    _common(p)
    p.add_argument("--objective", required=True)
    p.add_argument("--checkpoints", type=int, help="Binomial checkpoint budget (default store all)")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_adjoint_check)

    p = sub.add_parser("events", help="integrate with event detection")
    _common(p)
    p.add_argument("--trajectory", help="trajectory CSV path (default stdout)")
    p.add_argument("--events-out", help="event log CSV path")
    p.add_argument("--output", "-o", help="result JSON path")
    p.set_defaults(func=cmd_events)

    p = sub.add_parser("tableau", help="print registered coefficients")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("--check", action="store_true", help="include order-condition residuals")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_tableau)

    p = sub.add_parser("problems", help="list the problem library")
    p.set_defaults(func=cmd_problems)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ProblemError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
