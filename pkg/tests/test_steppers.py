import math

import numpy as np
import pytest

from tsdae.adapt import AdaptConfig
from tsdae.core import EquationKind, ProblemError, ProblemSpec, SolveOptions, ToleranceSpec, make_problem
from tsdae.problems import build_problem, kinetics_solution
from tsdae.steppers import (
    ERKStepper,
    StepperState,
    Termination,
    ark_imex_step,
    bdf_step,
    erk_step,
    interpolate,
    make_stepper,
    rosw_step,
    solve,
    theta_step,
)
from tsdae.tableaux import available, registry_get, ros_tableau

from conftest import scalar_linear, scalar_stiff

# u' = -u^2 + g(t) with exact solution cos(t) + 2, split into a stiff
# nonlinear part and a time-dependent explicit part
SPLIT = make_problem("split", {
    "h": lambda t, u: -u * u,
    "h_jac": lambda t, u: np.diag(-2 * u),
    "g": lambda t, u: np.array([-math.sin(t) + (math.cos(t) + 2) ** 2]),
    "g_jac": lambda t, u: np.zeros((1, 1)),
}, dim=1)


def exact_split(t):
    return np.array([math.cos(t) + 2])


def fixed(dt, T=1.0, policy="matchstep"):
    return SolveOptions(dt0=dt, max_time=T, max_steps=10**6, final_time_policy=policy)


def test_euler_and_rk4_single_step():
    p = scalar_linear(1.0)
    out = erk_step(p, registry_get("euler"), StepperState(0.0, np.array([1.0]), 0.1))
    assert out.u_new[0] == pytest.approx(1.1, abs=1e-15)
    out = erk_step(p, registry_get("rk4"), StepperState(0.0, np.array([1.0]), 0.1))
    want = sum(0.1**k / math.factorial(k) for k in range(5))
    assert abs(out.u_new[0] - want) <= 1e-15
    assert want == pytest.approx(1.10517083, abs=1e-8)


@pytest.mark.parametrize("name", [n for n in available() if n not in ("theta",)])
def test_zero_rhs_leaves_state(name):
    p = make_problem("stiff", {"h": lambda t, u: np.zeros(2), "h_jac": lambda t, u: np.zeros((2, 2))},
                     dim=2)
    u0 = np.array([1.5, -0.25])
    kw = {"starter": "rosw:rodas3"} if name.startswith("bdf") else {}
    st = make_stepper(p, name, **kw)
    res = solve(p, st, u0, fixed(0.1))
    np.testing.assert_array_equal(res.final_u, u0)
    assert res.steps_rejected == 0
    out = st.step(0.0, u0, 0.1)
    if out.err_estimate is not None:
        np.testing.assert_array_equal(out.err_estimate, 0.0)


def test_theta_closed_forms():
    p = scalar_stiff(-1.0)
    out = theta_step(p, 1.0, StepperState(0.0, np.array([1.0]), 0.1))
    assert out.u_new[0] == pytest.approx(1 / 1.1, rel=1e-13)
    out = theta_step(p, 0.5, StepperState(0.0, np.array([1.0]), 0.1))
    assert out.u_new[0] == pytest.approx(0.95 / 1.05, rel=1e-13)


def test_theta_shift_passed_to_jacobian():
    seen = []

    def jac(t, u, ud, a):
        seen.append(a)
        return np.array([[a + 1.0]])

    p = ProblemSpec(dim=1, ifunction=lambda t, u, ud: ud + u, ijacobian=jac)
    make_stepper(p, "theta:0.7").step(0.0, np.array([1.0]), 0.2)
    assert seen and all(a == pytest.approx(1 / (0.7 * 0.2)) for a in seen)


def test_pure_algebraic_dae():
    dae = ProblemSpec(dim=1, ifunction=lambda t, u, ud: u - np.sin(t), equation_kind=EquationKind.DAE)
    out = make_stepper(dae, "theta:1").step(0.0, np.array([0.0]), 0.1)
    assert out.u_new[0] == pytest.approx(math.sin(0.1), abs=1e-12)


def test_imex_zero_explicit_part_equals_dirk():
    p = make_problem("stiff", {"h": lambda t, u: np.array([u[1], -np.sin(u[0])])}, dim=2)
    a = solve(p, make_stepper(p, "arkimex:ars443"), [1.0, 0.0], fixed(0.1))
    b = solve(p, make_stepper(p, "dirk:ars443"), [1.0, 0.0], fixed(0.1))
    c = solve(p, make_stepper(p, "arkimex:ars443", fully_implicit=True), [1.0, 0.0], fixed(0.1))
    np.testing.assert_array_equal(a.final_u, b.final_u)
    np.testing.assert_array_equal(a.final_u, c.final_u)


def test_imex_trivial_stiff_part_equals_erk():
    g = make_problem("nonstiff", {"g": lambda t, u: np.array([u[1], -np.sin(u[0])])}, dim=2)
    a = solve(g, make_stepper(g, "arkimex:ark3"), [1.0, 0.0], fixed(0.1))
    b = solve(g, ERKStepper(g, registry_get("ark3").explicit), [1.0, 0.0], fixed(0.1))
    np.testing.assert_allclose(a.final_u, b.final_u, rtol=0, atol=1e-12)


def test_ark_imex_functional_form():
    lam, mu = -50.0, 1.0
    p = build_problem("linear-test", lam=lam, mu=mu).problem
    tab = registry_get("ars122")
    out = ark_imex_step(p, tab, StepperState(0.0, np.array([1.0]), 0.01))
    E, I = tab.explicit, tab.implicit
    ze, zi = mu * 0.01, lam * 0.01
    one = np.ones(tab.s)
    R = 1 + (ze * E.b + zi * I.b) @ np.linalg.solve(np.eye(tab.s) - ze * E.A - zi * I.A, one)
    assert out.u_new[0] == pytest.approx(R, rel=1e-12)


def test_one_stage_rosenbrock_closed_form():
    gamma, lam, dt = 0.5, -3.0, 0.1
    tab = ros_tableau("ros1", [[0.0]], [[gamma]], [1.0], p=1)
    p = scalar_stiff(lam)
    out = rosw_step(p, tab, StepperState(0.0, np.array([2.0]), dt))
    assert out.u_new[0] == pytest.approx(2.0 * (1 + dt * lam / (1 - gamma * dt * lam)), rel=1e-14)


def test_rosenbrock_kinetics_has_no_newton():
    inst = build_problem("kinetics")
    st = make_stepper(inst.problem, "rosw:ra34pw2")
    res = solve(inst.problem, st, inst.u0, fixed(0.001, T=0.1, policy="stepover"))
    assert res.counters.nonlinear_iters == 0
    assert res.counters.linear_iters > 0
    np.testing.assert_allclose(res.final_u, kinetics_solution(res.final_t, inst.u0, 0.9), atol=1e-10)


def _orders(problem, exact, scheme, dts, T=1.0, u0=None, **kw):
    errs = []
    for dt in dts:
        st = make_stepper(problem, scheme, **kw)
        r = solve(problem, st, exact(0.0) if u0 is None else u0, fixed(dt, T))
        errs.append(np.max(np.abs(r.final_u - exact(r.final_t))))
    return [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]


def test_w_method_with_zero_jacobian_keeps_order():
    p = scalar_stiff(-1.0)
    obs = _orders(p, lambda t: np.array([math.exp(-t)]), "rosw:ra34pw2", [0.1, 0.05, 0.025, 0.0125],
                  jacobian="zero")
    assert obs[-1] == pytest.approx(3.0, abs=0.2)


def test_bdf1_is_backward_euler():
    p = scalar_stiff(-1.0)
    out = bdf_step(p, 1, StepperState(0.0, np.array([1.0]), 0.1))
    assert out.u_new[0] == pytest.approx(1 / 1.1, rel=1e-13)


def test_bdf2_order():
    p = scalar_stiff(-1.0)
    obs = _orders(p, lambda t: np.array([math.exp(-t)]), "bdf:2", [0.1, 0.05, 0.025],
                  starter="rosw:rodas3")
    assert obs[-1] == pytest.approx(2.0, abs=0.2)


def test_bdf_order_bounds():
    p = scalar_stiff(-1.0)
    with pytest.raises(ProblemError):
        make_stepper(p, "bdf:7")
    with pytest.raises(ProblemError):
        make_stepper(p, "bdf:0")


@pytest.mark.parametrize("scheme,p", [
    ("rk:euler", 1), ("theta:cn", 2), ("rk:rk4", 4), ("arkimex:ars443", 3), ("arkimex:ark3", 3),
    ("rosw:ra34pw2", 3), ("rosw:rodas3", 3), ("bdf:2", 2), ("bdf:3", 3),
])
def test_declared_orders_on_smooth_scalar(scheme, p):
    kw = {"starter": "rosw:rodas3"} if scheme.startswith("bdf") else {}
    obs = _orders(SPLIT, exact_split, scheme, [0.1, 0.05, 0.025, 0.0125], **kw)
    assert obs[-1] == pytest.approx(p, abs=0.2), obs


def test_interpolate_endpoints_and_accuracy():
    p = scalar_linear(-1.0)
    st = make_stepper(p, "rk:dp5")
    u0 = np.array([1.0])
    out = st.step(0.0, u0, 0.1)
    np.testing.assert_array_equal(st.interpolate(out, 0.0), u0)
    np.testing.assert_array_equal(st.interpolate(out, 0.1), out.u_new)
    est = np.max(np.abs(out.err_estimate))
    for th in np.linspace(0.1, 0.9, 9):
        assert abs(st.interpolate(out, 0.1 * th)[0] - math.exp(-0.1 * th)) <= est


def test_functional_interpolate():
    p = scalar_linear(-1.0)
    tab = registry_get("bs3")
    out = erk_step(p, tab, StepperState(0.0, np.array([1.0]), 0.1))
    sd = out.stage_data
    np.testing.assert_array_equal(interpolate(None, sd, tab, 0.0), sd.u0)
    np.testing.assert_array_equal(interpolate(None, sd, tab, 0.1), sd.u1)
    est = np.max(np.abs(out.err_estimate))
    assert abs(interpolate(None, sd, tab, 0.05)[0] - math.exp(-0.05)) <= est
    with pytest.raises(ProblemError):
        interpolate(None, None, tab, 0.05)


def test_hermite_fallback_for_schemes_without_bstar():
    p = scalar_linear(-1.0)
    st = make_stepper(p, "rk:rk4")
    out = st.step(0.0, np.array([1.0]), 0.1)
    # cubic Hermite is fourth-order accurate in the interior
    assert st.interpolate(out, 0.05)[0] == pytest.approx(math.exp(-0.05), abs=1e-6)


def _kinetics_adaptive(**kw):
    inst = build_problem("kinetics")
    st = make_stepper(inst.problem, "rosw:ra34pw2")
    opts = SolveOptions(dt0=0.001, max_time=20.0, max_steps=1000, final_time_policy="stepover")
    return inst, st, solve(inst.problem, st, inst.u0, opts, ToleranceSpec(1e-6, 1e-6), AdaptConfig(), **kw)


def test_kinetics_listing_configuration():
    inst, _, res = _kinetics_adaptive()
    assert res.termination is Termination.REACHED_MAX_TIME
    assert res.final_t >= 20.0
    np.testing.assert_allclose(res.final_u, kinetics_solution(res.final_t, inst.u0, 0.9), atol=1e-4)


def test_stepover_never_interpolates():
    _, st, res = _kinetics_adaptive()
    np.testing.assert_array_equal(res.final_u, res.last_outcome.u_new)
    assert res.final_t == res.last_outcome.t_new


def test_interpolate_policy_final_state():
    p = scalar_linear(-1.0)
    st = make_stepper(p, "rk:dp5")
    res = solve(p, st, [1.0], fixed(0.3, policy="interpolate"), ToleranceSpec(1e-6, 1e-6), AdaptConfig())
    assert res.final_t == 1.0
    assert res.last_outcome.t < 1.0 < res.last_outcome.t_new
    np.testing.assert_array_equal(res.final_u, st.interpolate(res.last_outcome, 1.0))


def test_matchstep_lands_on_max_time():
    p = scalar_linear(-1.0)
    res = solve(p, make_stepper(p, "rk:rk4"), [1.0], fixed(0.3))
    assert res.final_t == 1.0 and res.steps_taken == 4


def test_determinism():
    _, _, a = _kinetics_adaptive()
    _, _, b = _kinetics_adaptive()
    np.testing.assert_array_equal(a.final_u, b.final_u)
    assert a.times == b.times and a.counters == b.counters


def test_counter_consistency():
    inst = build_problem("kinetics")
    reports = []
    st = make_stepper(inst.problem, "theta:1")
    orig = st.step

    def spy(t, u, dt):
        out = orig(t, u, dt)
        reports.extend(out.reports)
        return out

    st.step = spy
    res = solve(inst.problem, st, inst.u0, SolveOptions(dt0=0.5, max_time=10.0, max_steps=1000),
                ToleranceSpec(1e-4, 1e-4), AdaptConfig())
    assert reports
    assert res.counters.nonlinear_iters == sum(r.iterations for r in reports)
    assert res.counters.rejected_steps == sum(1 for e in res.adapt_log if not e.accept)
    assert res.steps_rejected == res.counters.rejected_steps


def _flaky(bad_calls):
    """u' = -u whose residual is poisoned for the first ``bad_calls`` evaluations."""
    calls = [0]

    def F(t, u, ud):
        calls[0] += 1
        return np.full(1, np.nan) if calls[0] <= bad_calls else ud + u

    return ProblemSpec(dim=1, ifunction=F, ijacobian=lambda t, u, ud, a: np.array([[a + 1.0]]))


def test_failures_retry_with_smaller_step():
    p = _flaky(3)
    res = solve(p, make_stepper(p, "theta:1"), [1.0], SolveOptions(dt0=0.5, max_time=1.0),
                ToleranceSpec(1e-3, 1e-3), AdaptConfig())
    assert res.termination is Termination.REACHED_MAX_TIME
    assert res.counters.nonlinear_failures == 3
    assert res.adapt_log[0].dt < 0.5


def test_divergence_after_failure_budget():
    p = _flaky(10)
    res = solve(p, make_stepper(p, "theta:1"), [1.0],
                SolveOptions(dt0=0.5, max_time=1.0, max_nonlinear_failures=2),
                ToleranceSpec(1e-3, 1e-3), AdaptConfig())
    assert res.termination is Termination.DIVERGED
    assert res.counters.nonlinear_failures == 3
    # without adaptivity there is no smaller step to retry with
    q = _flaky(1)
    res = solve(q, make_stepper(q, "theta:1"), [1.0], SolveOptions(dt0=0.5, max_time=1.0))
    assert res.termination is Termination.DIVERGED


def test_max_steps_termination():
    p = scalar_linear(-1.0)
    res = solve(p, make_stepper(p, "rk:rk4"), [1.0], SolveOptions(dt0=0.01, max_time=1.0, max_steps=5))
    assert res.termination is Termination.REACHED_MAX_STEPS and res.steps_taken == 5


def test_adaptive_requires_estimator_and_tolerance():
    p = scalar_linear(-1.0)
    with pytest.raises(ProblemError):
        solve(p, make_stepper(p, "rk:rk4"), [1.0], fixed(0.1), ToleranceSpec(), AdaptConfig())
    with pytest.raises(ProblemError):
        solve(p, make_stepper(p, "rk:dp5"), [1.0], fixed(0.1), None, AdaptConfig())


def test_scheme_family_checks():
    p = scalar_stiff(-1.0)
    with pytest.raises(ProblemError):
        make_stepper(p, "rosw:rk4")
    with pytest.raises(ProblemError):
        make_stepper(p, "magic:rk4")
