import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hs
from scipy.integrate import solve_ivp

from orderpos import fluid as fl
from orderpos.lob_simulator import Custom, Uniform, power_profile

REF = fl.FluidParams(1.0, (1.0, 0.6, 0.8, 1.0, 0.7, 0.8), 100.0, 100.0, 100.0)
BALANCED = fl.FluidParams(1.0, (1.4, 0.6, 0.8, 1.0, 0.7, 0.8), 100.0, 100.0, 100.0)
UNIT = fl.FluidParams(1.0, (1.0, 1.0, 1.0, 1.0, 1.0, 1.0), 1.0, 1.0, 1.0)


def rk_position(p, t_eval):
    """Adaptive RK integration of the order-position ODE."""
    v = p.vbar

    def rhs(t, y):
        qb = p.qb - p.lam * p.vb * t
        return [-p.lam * (v[1] + v[2] * y[0] / qb)]

    sol = solve_ivp(rhs, (0.0, float(np.max(t_eval))), [p.z], method="DOP853", rtol=1e-13,
                    atol=1e-12 * p.z, t_eval=t_eval)
    return sol.y[0]


def test_reference_regime_constants():
    assert (REF.a, REF.b, REF.c) == pytest.approx((0.6, 125.0, -0.5), rel=1e-14)
    assert (REF.vb, REF.va) == pytest.approx((0.4, 0.5), rel=1e-14)
    ta, tb, tz = fl.fluid_hitting_times(REF)
    assert ta == pytest.approx(200.0, rel=1e-14)
    assert tb == pytest.approx(250.0, rel=1e-14)
    assert tz == pytest.approx(100.0, rel=1e-12)
    assert fl.fluid_tau(REF) == pytest.approx(100.0, rel=1e-12)
    assert fl.fluid_queues(REF, 100.0)[0] == pytest.approx(60.0, rel=1e-14)
    assert fl.fluid_queues(REF, 0.0) == (100.0, 100.0)
    assert fl.fluid_position(REF, 0.0) == 100.0


def test_summary_keys():
    s = REF.summary()
    assert set(s) == {"tau_a", "tau_b", "tau_z", "a", "b", "c", "vb", "va"}


def test_non_depleting_sides():
    p = fl.FluidParams(1.0, (1.0, 0.2, 0.3, 2.0, 0.7, 0.8), 10.0, 10.0, 5.0)
    ta, tb, _ = fl.fluid_hitting_times(p)
    assert ta == math.inf and tb == math.inf
    qb, qa = fl.fluid_queues(p, np.array([0.0, 1.0, 5.0]))
    assert np.all(np.diff(qb) >= 0) and np.all(np.diff(qa) >= 0)


def test_balanced_branch():
    p = BALANCED
    assert p.c == 0.0
    t = np.linspace(0.0, 100.0, 11)
    a, b, z = p.a, p.b, p.z
    assert np.allclose(fl.fluid_position(p, t), (z + a * b) * np.exp(-t / b) - a * b, rtol=1e-13, atol=1e-12)
    assert fl.fluid_hitting_times(p)[2] == pytest.approx(b * math.log((z + a * b) / (a * b)), rel=1e-12)


def test_minus_one_branch():
    assert (UNIT.a, UNIT.b, UNIT.c) == (1.0, 1.0, -1.0)
    tz = fl.fluid_hitting_times(UNIT)[2]
    assert tz == pytest.approx(1.0 - math.exp(-1.0), rel=1e-13)
    t = np.linspace(0.0, 0.99 * tz, 50)
    assert np.allclose(fl.fluid_position(UNIT, t), rk_position(UNIT, t), rtol=1e-9, atol=1e-12)


def test_no_cancellation_degenerate():
    p = fl.FluidParams(1.0, (1.0, 0.5, 0.0, 1.0, 0.7, 0.8), 10.0, 10.0, 4.0)
    assert fl.fluid_hitting_times(p)[2] == pytest.approx(8.0, rel=1e-14)
    assert fl.fluid_position(p, 2.0) == pytest.approx(3.0, rel=1e-14)


@pytest.mark.parametrize("p", [REF, BALANCED, UNIT])
def test_closed_form_vs_rk(p):
    tz = fl.fluid_hitting_times(p)[2]
    t = np.linspace(0.0, 0.99 * tz, 200)
    ref = rk_position(p, t)
    assert np.max(np.abs(fl.fluid_position(p, t) - ref) / np.abs(ref)) < 1e-8


@pytest.mark.parametrize("p", [REF, BALANCED, UNIT])
def test_endpoint_invariants(p):
    ta, tb, tz = fl.fluid_hitting_times(p)
    assert abs(fl.fluid_position(p, tz)) < 1e-9 * p.z
    assert tz <= tb
    if math.isfinite(tb):
        assert abs(p.qb - p.lam * p.vb * tb) < 1e-9 * max(p.qb, p.qa)


@pytest.mark.parametrize("p", [REF, BALANCED, UNIT])
def test_slope_at_execution(p):
    tz = fl.fluid_hitting_times(p)[2]
    h = 1e-4 * tz
    f = lambda s: fl._z_free(p, np.asarray(s, dtype=float))
    slope = (3 * f(tz) - 4 * f(tz - h) + f(tz - 2 * h)) / (2 * h)
    assert slope == pytest.approx(-p.a, rel=1e-6)


@pytest.mark.parametrize("eps", [1e-6, 1e-7, -1e-6, -1e-7])
def test_branch_continuity_at_zero(eps):
    # c = -vb / vbar3 = eps
    v3 = 0.8
    v1 = 0.6 + v3 + eps * v3
    p = fl.FluidParams(1.0, (v1, 0.6, v3, 1.0, 0.7, 0.8), 100.0, 100.0, 100.0)
    assert p.c == pytest.approx(eps, rel=1e-6)
    t = np.linspace(0.0, 90.0, 31)
    a, b, z = p.a, p.b, p.z
    ref = (z + a * b) * np.exp(-t / b) - a * b
    assert np.max(np.abs(fl.fluid_position(p, t) - ref) / np.abs(ref)) < 1e-5


@pytest.mark.parametrize("eps", [1e-6, -1e-6, 1e-7])
def test_branch_continuity_at_minus_one(eps):
    p = fl.FluidParams(1.0, (1.0 - eps, 1.0, 1.0, 1.0, 1.0, 1.0), 1.0, 1.0, 1.0)
    assert p.c == pytest.approx(-1.0 - eps, rel=1e-9)
    t = np.linspace(0.0, 0.6, 31)
    ref = fl.fluid_position(UNIT, t)
    assert np.max(np.abs(fl.fluid_position(p, t) - ref) / np.abs(ref)) < 1e-5


def test_smallest_root_on_grid():
    for p in (REF, BALANCED, UNIT):
        tz = fl.fluid_hitting_times(p)[2]
        t = np.linspace(0.0, tz, 10_001)[1:-1]
        assert np.all(fl.fluid_position(p, t) > 0)


@given(hs.floats(0.1, 2.0), hs.floats(0.05, 1.0), hs.floats(0.05, 1.0), hs.floats(0.0, 2.0),
       hs.floats(1.0, 50.0), hs.floats(0.05, 1.0))
def test_random_regimes(v2, v3, share, v1, qb, zfrac):
    p = fl.FluidParams(1.0, (v1, v2, v3, 1.0, 0.5, 0.4), qb, 10.0, zfrac * qb)
    ta, tb, tz = fl.fluid_hitting_times(p)
    assert 0 < tz <= tb
    assert abs(fl.fluid_position(p, tz)) < 1e-8 * p.z
    t = np.linspace(0.0, tz, 2001)[1:-1]
    assert np.all(fl.fluid_position(p, t) > 0)
    t = np.linspace(0.0, 0.95 * tz, 20)
    ref = rk_position(p, t)
    assert np.max(np.abs(fl.fluid_position(p, t) - ref) / np.maximum(np.abs(ref), 1e-300)) < 1e-7


def test_general_identity_matches_closed_form():
    g = fl.solve_fluid_general(REF, Uniform())
    assert g.tau_z == pytest.approx(100.0, rel=1e-9)
    t = np.linspace(0.0, 99.0, 100)
    ref = fl.fluid_position(REF, t)
    assert np.max(np.abs(g.z(t) - ref) / ref) < 1e-8
    assert fl.fluid_position_general(REF, Uniform(), 50.0) == pytest.approx(fl.fluid_position(REF, 50.0),
                                                                            abs=1e-8 * REF.z)


def test_general_square_profile_is_slower():
    gi = fl.solve_fluid_general(REF, Uniform())
    gs = fl.solve_fluid_general(REF, power_profile(2))
    t = np.linspace(0.0, min(gi.tau_z, gs.tau_z), 400)
    assert np.all(gs.z(t) >= gi.z(t) - 1e-9)
    assert gs.tau_z >= gi.tau_z


def test_general_threshold_profile_holds_position():
    prof = Custom(profile=lambda x: np.maximum(0.0, (np.asarray(x) - 0.9) / 0.1), lipschitz=10.0)
    p = fl.FluidParams(1.0, (1.0, 0.0, 0.8, 1.0, 0.7, 0.8), 100.0, 100.0, 50.0)
    g = fl.solve_fluid_general(p, prof)
    # Z/Q^b stays below 0.9 while Q^b > 50/0.9
    t_hold = (100.0 - 50.0 / 0.9) / (p.lam * p.vb)
    t = np.linspace(0.0, 0.99 * t_hold, 50)
    assert np.allclose(g.z(t), 50.0, rtol=0, atol=1e-9)


def test_linear_intensity_reduces_to_constant_rate():
    t = np.linspace(0.0, 99.0, 12)
    qb, qa, z, ta, tb, tz = fl.fluid_linear_intensity(REF, 0.0, 0.0, t)
    ref_b, ref_a = fl.fluid_queues(REF, t)
    assert np.array_equal(qb, ref_b) and np.array_equal(qa, ref_a)
    assert np.allclose(z, fl.fluid_position(REF, t), rtol=1e-9)
    assert (ta, tb) == pytest.approx((200.0, 250.0), rel=1e-14)
    assert tz == pytest.approx(100.0, rel=1e-8)


def test_linear_intensity_small_coefficients():
    gaps = []
    for eps in (1e-6, 1e-7, 1e-8):
        qb = fl.fluid_linear_intensity(REF, eps, eps, 50.0)[0]
        gaps.append(abs(qb - fl.fluid_queues(REF, 50.0)[0]))
    assert gaps[0] / gaps[1] == pytest.approx(10.0, rel=1e-3)
    assert gaps[1] / gaps[2] == pytest.approx(10.0, rel=1e-3)
    small = fl.FluidParams(1.0, REF.vbar, 1.0, 1.0, 1.0)
    for t in (0.01, 0.05):
        qb, qa, *_ = fl.fluid_linear_intensity(small, 1e-8, 1e-8, t)
        rb, ra = fl.fluid_queues(small, t)
        assert abs(qb - rb) < 1e-9 and abs(qa - ra) < 1e-9


def test_linear_intensity_depletion_root():
    a_q = b_q = 0.01
    sol = fl.fluid_linear_intensity(REF, a_q, b_q)
    r0 = REF.lam + a_q * REF.qa + b_q * REF.qb
    k = a_q * REF.va + b_q * REF.vb

    def qb(t):
        return REF.qb - REF.vb * r0 * (1 - math.exp(-k * t)) / k

    lo, hi = 0.0, 1.0
    while qb(hi) > 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if qb(mid) > 0 else (lo, mid)
    assert sol.tau_b == pytest.approx(0.5 * (lo + hi), abs=1e-8)


def test_linear_intensity_vs_ode():
    sol = fl.fluid_linear_intensity(REF, 0.01, 0.01)
    t = np.linspace(0.0, 0.98 * sol.tau, 15)
    qb, qa, z = fl.linear_intensity_ode(REF, 0.01, 0.01, t)
    assert np.allclose(sol.queues(t)[0], qb, rtol=1e-9)
    assert np.allclose(sol.queues(t)[1], qa, rtol=1e-9)
    assert np.allclose(sol.z(t), z, rtol=1e-8, atol=1e-8)
    assert abs(sol.z(sol.tau_z)) < 1e-7 * REF.z


def test_linear_band_reports_non_depletion():
    sol = fl.fluid_linear_intensity(REF, 0.1, 0.0)
    assert not sol.bid_depletes and sol.ask_depletes
    assert sol.tau_b == math.inf
    assert fl.linear_band(REF, 0.01, 0.01) == (True, True)


def test_params_validation():
    with pytest.raises(ValueError):
        fl.FluidParams(1.0, REF.vbar, 10.0, 10.0, 20.0)
    with pytest.raises(ValueError):
        fl.FluidParams(1.0, REF.vbar, 0.0, 10.0, 0.0)
