import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hs

from orderpos import point_processes as pp


def test_poisson_count_band():
    for seed in range(5):
        ev = pp.simulate_arrivals(pp.Poisson(1.0), 1e4, seed)
        assert abs(len(ev) - 1e4) < 4 * math.sqrt(1e4)


def test_event_times_invariants():
    ev = pp.simulate_arrivals(pp.Poisson(3.0), 50.0, 1)
    assert np.all(np.diff(ev.times) > 0)
    assert ev.times[0] >= 0 and ev.times[-1] <= 50.0
    assert ev.count(50.0) == len(ev)
    assert ev.count(0.0) == 0


def test_nonpositive_horizon_rejected():
    with pytest.raises(ValueError):
        pp.simulate_arrivals(pp.Poisson(1.0), 0.0, 0)


def test_supercritical_hawkes_rejected():
    with pytest.raises(ValueError):
        pp.simulate_arrivals(pp.HawkesExp(1.0, 1.0, 1.0), 10.0, 0)


def test_constants_arithmetic():
    assert pp.stationary_rate(pp.Poisson(3.0)) == 3.0
    h = pp.HawkesExp(1.0, 0.5, 1.0)
    c = pp.CoxShotNoiseExp(1.0, 2.0, 1.0, 2.0)
    assert pp.stationary_rate(h) == pytest.approx(2.0, rel=1e-15)
    assert pp.stationary_rate(c) == pytest.approx(2.0, rel=1e-15)
    assert pp.clt_variance(pp.Poisson(1.0)) == 1.0
    assert pp.clt_variance(h) == pytest.approx(8.0, rel=1e-15)
    assert pp.clt_variance(c) == pytest.approx(2.5, rel=1e-15)


def test_state_dependent_has_no_constants():
    spec = pp.LinearStateDependent(1.0, 0.1, 0.1)
    with pytest.raises(pp.UnsupportedSpecError):
        pp.stationary_rate(spec)
    with pytest.raises(pp.UnsupportedSpecError):
        pp.clt_variance(spec)


def test_state_dependent_needs_callback():
    with pytest.raises(ValueError):
        pp.simulate_arrivals(pp.LinearStateDependent(1.0, 0.1, 0.1), 1.0, 0)


def test_state_dependent_zero_coefficients_is_poisson():
    a = pp.simulate_arrivals(pp.LinearStateDependent(2.0, 0.0, 0.0), 20.0, 4,
                             state_callback=lambda t, i: (1.0, 1.0))
    b = pp.simulate_arrivals(pp.Poisson(2.0), 20.0, 4)
    assert np.allclose(a.times, b.times, rtol=1e-14, atol=0)


@pytest.mark.parametrize("spec", [pp.Poisson(2.0), pp.HawkesExp(1.0, 0.5, 1.0),
                                  pp.CoxShotNoiseExp(1.0, 2.0, 1.0, 2.0)])
def test_long_run_rate(spec):
    horizon = 1e5
    ev = pp.simulate_arrivals(spec, horizon, 12)
    lam, vd2 = pp.stationary_rate(spec), pp.clt_variance(spec)
    assert abs(len(ev) / horizon - lam) < 3 * math.sqrt(vd2 / horizon)


def test_poisson_block_variance():
    ev = pp.simulate_arrivals(pp.Poisson(1.0), 1e5, 2)
    counts = np.bincount(ev.times.astype(np.int64), minlength=100_000)[:100_000]
    assert abs(counts.var(ddof=1) - 1.0) < 0.05


def test_determinism():
    spec = pp.HawkesExp(1.0, 0.5, 1.0)
    a = pp.simulate_arrivals(spec, 500.0, 9)
    b = pp.simulate_arrivals(spec, 500.0, 9)
    assert np.array_equal(a.times, b.times)
    c = pp.simulate_arrivals(spec, 500.0, 10)
    assert not np.array_equal(a.times[:10], c.times[:10])


def test_csv_round_trip(tmp_path):
    ev = pp.simulate_arrivals(pp.Poisson(1.0), 30.0, 5)
    f = tmp_path / "ev.csv"
    pp.write_event_times(f, ev)
    back = pp.read_event_times(f, 30.0)
    assert np.array_equal(back.times, ev.times)


@given(hs.floats(0.1, 10.0), hs.floats(0.0, 0.95), hs.floats(0.1, 5.0))
def test_hawkes_constants_consistent(nu, ratio, b_h):
    h = pp.HawkesExp(nu, ratio * b_h, b_h)
    lam = pp.stationary_rate(h)
    assert lam == pytest.approx(nu / (1 - ratio), rel=1e-12)
    assert pp.clt_variance(h) == pytest.approx(lam / (1 - ratio) ** 2, rel=1e-12)
    assert pp.clt_variance(h) >= lam


@given(hs.floats(0.1, 5.0), hs.floats(0.01, 5.0), hs.floats(0.1, 5.0), hs.floats(0.1, 5.0))
def test_cox_overdispersed(nu, rho_s, kappa, delta_s):
    c = pp.CoxShotNoiseExp(nu, rho_s, kappa, delta_s)
    assert pp.clt_variance(c) >= pp.stationary_rate(c)
