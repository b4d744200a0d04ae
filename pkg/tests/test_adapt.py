import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsdae.adapt import AdaptConfig, AdaptKind, Controller, adapt_decide, weighted_error_norm
from tsdae.core import ToleranceSpec


def test_werr_zero_and_formula():
    tol = ToleranceSpec(atol=1e-2, rtol=1e-3)
    assert weighted_error_norm([1.0, 2.0], [1.0, 2.0], tol) == 0.0
    assert weighted_error_norm([1.0], [0.99], tol) == pytest.approx(0.01 / (0.01 + 0.001 * 1.0), rel=1e-12)
    assert weighted_error_norm([1.0], [0.99], tol) == pytest.approx(0.9090909, rel=1e-6)


def test_werr_vector_atol_weighting():
    tol = ToleranceSpec(atol=np.array([1e-2, 1e-1, 1e-4]), rtol=0.0)
    err = np.array([1e-3, 1e-3, 1e-3])
    # component 1 carries the largest floor and so the smallest weighted error
    w = err / np.array([1e-2, 1e-1, 1e-4])
    assert weighted_error_norm(err, np.zeros(3), tol) == pytest.approx(w.max())
    assert weighted_error_norm(err, np.zeros(3), tol, "2") == pytest.approx(np.sqrt(np.mean(w**2)))
    assert np.argmin(w) == 1


def test_basic_examples():
    cfg = AdaptConfig(kind="basic")
    d = adapt_decide(cfg, 1.0, 1, 0.2)
    assert d.accept and d.factor == pytest.approx(0.9) and d.next_dt == pytest.approx(0.18)
    d = adapt_decide(cfg, 1e6, 3, 0.2)
    assert not d.accept and d.factor == pytest.approx(0.05)
    d = adapt_decide(AdaptConfig(kind="none"), 1e6, 3, 0.2)
    assert d.accept and d.next_dt == 0.2


def test_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(clip_low=1.5)
    with pytest.raises(ValueError):
        AdaptConfig(safety=0.0)
    with pytest.raises(ValueError):
        AdaptConfig(norm="1")


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e8), st.floats(0, 1e8), st.integers(1, 6), st.sampled_from(["basic", "dsp"]))
def test_factor_monotone_in_werr(w1, w2, order, kind):
    lo, hi = sorted((w1, w2))
    ctl = Controller(AdaptConfig(kind=kind))
    ctl.decide(0.5, order, 0.1)  # seed DSP history
    a = ctl.raw_factor(lo, order, 0.1)
    b = ctl.raw_factor(hi, order, 0.1)
    assert b <= a


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e12), st.integers(1, 6), st.booleans(), st.sampled_from(["basic", "dsp"]),
       st.floats(1e-6, 10))
def test_ratio_bounds(werr, order, just_rejected, kind, prev):
    cfg = AdaptConfig(kind=kind)
    ctl = Controller(cfg)
    ctl.decide(min(prev, 1.0), order, 0.3)
    d = ctl.decide(werr, order, 0.1, just_rejected)
    assert cfg.clip_low * cfg.reject_factor - 1e-15 <= d.next_dt / 0.1 <= cfg.clip_high + 1e-12
    assert d.accept == (werr <= 1.0)


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_basic_tracks_safety_power(p):
    C = 1e3  # error model werr = C dt^(p+1)
    ctl = Controller(AdaptConfig(kind="basic"))
    dt = 0.5
    for _ in range(5):
        werr = C * dt ** (p + 1)
        d = ctl.decide(werr, p, dt)
        dt = d.next_dt
    assert C * dt ** (p + 1) == pytest.approx(0.9 ** (p + 1), rel=0.2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-6, 1e3), min_size=2, max_size=8), st.integers(1, 5))
def test_dsp_identity_filter_is_basic(werrs, order):
    basic = Controller(AdaptConfig(kind=AdaptKind.BASIC))
    dsp = Controller(AdaptConfig(kind=AdaptKind.DSP, dsp_filter=(1.0, 0.0, 0.0)))
    dt_b = dt_d = 0.1
    for w in werrs:
        assert dsp.raw_factor(w, order, dt_d) == basic.raw_factor(w, order, dt_b)
        db, dd = basic.decide(w, order, dt_b), dsp.decide(w, order, dt_d)
        assert db == dd
        dt_b, dt_d = db.next_dt, dd.next_dt


def test_dsp_first_step_is_basic():
    dsp = Controller(AdaptConfig(kind="dsp"))
    basic = Controller(AdaptConfig(kind="basic"))
    assert dsp.decide(0.3, 2, 0.1) == basic.decide(0.3, 2, 0.1)
    # afterwards the filter uses history and differs
    assert dsp.raw_factor(0.3, 2, 0.1) != basic.raw_factor(0.3, 2, 0.1)


def test_accepted_retry_never_grows():
    d = adapt_decide(AdaptConfig(), 1e-8, 2, 0.1, just_rejected=True)
    assert d.accept and d.next_dt <= 0.1
