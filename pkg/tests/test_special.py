import math

import numpy as np
import pytest
import scipy.special as sps
import scipy.stats as st
from hypothesis import given
from hypothesis import strategies as hs

from orderpos.special import iv, ive, kolmogorov_sf, ks_test, norm_cdf, norm_sf


def test_ive_matches_scipy_on_grid():
    nu = np.array([0.0, 0.3, 0.5, 1.0, 2.7, 10.0, 37.0, 49.9, 50.0, 80.0, 200.0])[:, None]
    x = np.logspace(-3, 3, 121)[None, :]
    ours = ive(nu + 0 * x, x + 0 * nu)
    ref = sps.ive(nu, x)
    mask = ref > 1e-290
    rel = np.abs(ours - ref)[mask] / ref[mask]
    assert rel.max() < 1e-11


def test_recurrence_residual():
    nu = np.linspace(1.0, 40.0, 157)[:, None]
    x = np.logspace(-3, 2, 301)[None, :]
    lo, mid, hi = ive(nu - 1 + 0 * x, x), ive(nu + 0 * x, x), ive(nu + 1 + 0 * x, x)
    scale = np.maximum(np.abs(lo), np.abs(2 * nu / x * mid))
    assert (np.abs(lo - hi - 2 * nu / x * mid) / scale).max() < 1e-10


def test_wronskian_with_scipy_k():
    # I_nu K_{nu+1} + I_{nu+1} K_nu = 1/x
    nu = np.linspace(0.0, 30.0, 31)[:, None]
    x = np.logspace(-1, 2, 40)[None, :]
    w = ive(nu + 0 * x, x) * sps.kve(nu + 1, x) + ive(nu + 1 + 0 * x, x) * sps.kve(nu, x)
    assert np.max(np.abs(w * x - 1.0)) < 1e-11


def test_special_values():
    assert ive(0.0, 0.0) == 1.0
    assert ive(1.0, 0.0) == 0.0
    # I_{1/2}(x) = sqrt(2/(pi x)) sinh x
    for x in (0.01, 1.0, 7.5, 40.0):
        assert iv(0.5, x) == pytest.approx(math.sqrt(2 / (math.pi * x)) * math.sinh(x), rel=1e-13)


def test_ive_rejects_negative():
    with pytest.raises(ValueError):
        ive(-1.0, 1.0)
    with pytest.raises(ValueError):
        ive(1.0, -1.0)


def test_phi_erfc_identity():
    x = np.linspace(-40.0, 40.0, 16001)
    ref = np.array([math.erfc(-v / math.sqrt(2)) / 2 for v in x])
    assert np.max(np.abs(norm_cdf(x) - ref)) < 1e-12
    tail = np.array([math.erfc(v / math.sqrt(2)) / 2 for v in x])
    big = tail > 1e-300
    assert np.max(np.abs(norm_sf(x)[big] - tail[big]) / tail[big]) < 1e-12


def test_kolmogorov_matches_scipy():
    x = np.linspace(0.05, 3.0, 120)
    ours = np.array([kolmogorov_sf(v) for v in x])
    assert np.max(np.abs(ours - st.kstwobign.sf(x))) < 1e-10


def test_ks_statistic_matches_scipy():
    rng = np.random.default_rng(3)
    sample = rng.normal(size=500)
    d, p = ks_test(sample, norm_cdf)
    ref = st.kstest(sample, "norm")
    assert d == pytest.approx(ref.statistic, abs=1e-12)
    assert p == pytest.approx(st.kstwobign.sf(math.sqrt(500) * d), abs=1e-9)


@given(hs.floats(0.0, 60.0), hs.floats(1e-3, 500.0))
def test_ive_positive_and_bounded(nu, x):
    v = ive(nu, x)
    assert 0.0 < v <= 1.0


@given(hs.floats(0.0, 30.0), hs.floats(1e-2, 100.0))
def test_ive_decreasing_in_order(nu, x):
    assert ive(nu + 1.0, x) < ive(nu, x)


@given(hs.floats(-30.0, 30.0))
def test_phi_symmetry(x):
    assert norm_cdf(x) + norm_cdf(-x) == pytest.approx(1.0, abs=2e-16)
