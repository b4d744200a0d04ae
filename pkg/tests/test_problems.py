import numpy as np
import pytest

from tsdae.adapt import AdaptConfig
from tsdae.core import ProblemError, SolveOptions, ToleranceSpec, eval_rhs, eval_rhsjacobian, explicit_rhs
from tsdae.linalg import fd_jacobian
from tsdae.problems import LIBRARY, build_problem, grayscott_initial
from tsdae.steppers import make_stepper, solve


@pytest.mark.parametrize("name", ["kinetics", "linear-test"])
@pytest.mark.parametrize("t", [0.0, 0.3, 2.0])
def test_exact_solution_satisfies_equation(name, t):
    inst = build_problem(name)
    h = 1e-5
    u = inst.exact(t)
    ud = (inst.exact(t + h) - inst.exact(t - h)) / (2 * h)
    np.testing.assert_allclose(explicit_rhs(inst.problem, t, u), ud, atol=1e-9)
    np.testing.assert_allclose(inst.exact(0.0), inst.u0, rtol=1e-15)


def test_kinetics_equal_concentrations_branch():
    inst = build_problem("kinetics", u0_0=0.5, u0_1=0.5)
    # with equal initial amounts a = b = a0 / (1 + a0 k t)
    np.testing.assert_allclose(inst.exact(2.0)[:2], 0.5 / (1 + 0.5 * 0.9 * 2.0), rtol=1e-15)


def test_library_parameters():
    with pytest.raises(ProblemError, match="accepted"):
        build_problem("kinetics", rate=1.0)
    with pytest.raises(ProblemError, match="did you mean"):
        build_problem("orgeo")
    for name, entry in LIBRARY.items():
        inst = entry.build() if name != "grayscott" else entry.build(N=4)
        assert inst.u0.shape == (inst.problem.dim,)


def test_grayscott_initial_layout():
    u0 = grayscott_initial(10)
    u, v = u0[0::2].reshape(10, 10), u0[1::2].reshape(10, 10)
    assert np.all((u == 1.0) | (u == 0.5))
    assert np.array_equal(u == 0.5, v == 0.25)
    assert np.array_equal((u == 0.5), (u == 0.5).T)
    with pytest.raises(ProblemError):
        build_problem("grayscott", N=2)


def test_grayscott_jacobian_matches_fd():
    inst = build_problem("grayscott", N=4)
    p = inst.problem
    rng = np.random.default_rng(7)
    y = inst.u0 + 0.1 * rng.standard_normal(inst.u0.size)
    A = eval_rhsjacobian(p, 0.0, y)
    B = fd_jacobian(lambda t, x: eval_rhs(p, t, x), 0.0, y)
    np.testing.assert_allclose(A, B, atol=1e-5 * np.abs(A).max())


def test_grayscott_bounded():
    inst = build_problem("grayscott", N=16)
    p = inst.problem
    st = make_stepper(p, "arkimex:ark3", fully_implicit=True)
    res = solve(p, st, inst.u0, SolveOptions(dt0=1e-4, max_time=5.0, max_steps=10000),
                ToleranceSpec(1e-4, 1e-4), AdaptConfig(), keep_states=True)
    assert res.termination.value == "ReachedMaxTime"
    for u in res.states:
        assert u.min() >= -1e-12
        assert u[0::2].max() <= 1.0 + 1e-12


def test_bouncing_ball_free_flight():
    inst = build_problem("bouncing-ball")
    p = inst.problem
    res = solve(p, make_stepper(p, "rk:rk4"), inst.u0,
                SolveOptions(dt0=0.1, max_time=1.0, final_time_policy="matchstep"))
    # polynomial motion is integrated exactly by a fourth-order method
    np.testing.assert_allclose(res.final_u, [10.0 - 4.9, -9.8], rtol=1e-13)
