import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hs
from hypothesis.extra import numpy as hnp

from orderpos import order_flow as of
from orderpos.order_flow import Constant, Exponential, GeometricInteger, LogNormal, MarkModel

UNIFORM = MarkModel.constant([1.0] * 6)
REF_VBAR = (1.0, 0.6, 0.8, 1.0, 0.7, 0.8)


def test_mean_vectors():
    assert np.allclose(of.mean_vector(UNIFORM), 1 / 6, rtol=1e-15)
    # these weights sum to 1.2, so renormalize and stretch the means to keep vbar
    p = np.array([0.25, 0.15, 0.20, 0.25, 0.15, 0.20]) / 1.2
    m = MarkModel(p=tuple(p), laws=tuple(Exponential(4.8) for _ in range(6)))
    assert np.allclose(of.mean_vector(m), [1.0, 0.6, 0.8, 1.0, 0.6, 0.8], rtol=1e-14)
    assert np.allclose(of.mean_vector(MarkModel.from_mean_vector(REF_VBAR)), REF_VBAR, rtol=1e-15)
    one = MarkModel(p=(1, 0, 0, 0, 0, 0), laws=(Exponential(2.0),) + (Constant(1.0),) * 5)
    assert np.array_equal(of.mean_vector(one), [2.0, 0, 0, 0, 0, 0])


def test_uniform_covariance():
    v2, rho, a = of.long_run_covariance(UNIFORM)
    off = ~np.eye(6, dtype=bool)
    assert np.allclose(np.diag(a), 5 / 36, rtol=1e-14)
    assert np.allclose(a[off], -1 / 36, rtol=1e-14)
    assert np.allclose(v2, 5 / 36)
    assert np.allclose(np.diag(rho), 1.0)


def test_degenerate_covariances():
    const = MarkModel(p=(1, 0, 0, 0, 0, 0), laws=(Constant(3.0),) * 6)
    assert np.array_equal(of.long_run_covariance(const)[2], np.zeros((6, 6)))
    exp1 = MarkModel(p=(1, 0, 0, 0, 0, 0), laws=(Exponential(1.0),) + (Constant(1.0),) * 5)
    a = of.long_run_covariance(exp1)[2]
    expect = np.zeros((6, 6))
    expect[0, 0] = 1.0
    assert np.allclose(a, expect, atol=1e-15)


def test_covariance_vs_empirical():
    m = MarkModel(p=(0.1, 0.2, 0.1, 0.25, 0.15, 0.2),
                  laws=(Constant(1.0), Exponential(2.0), GeometricInteger(3.0), LogNormal(0.0, 0.5),
                        Constant(5.0), Exponential(1.5)))
    x = of.sample_marks(m, 1_000_000, 1)
    a = of.long_run_covariance(m)[2]
    emp = np.cov(x.T)
    # entrywise 5 SE, SE from fourth moments of the samples
    xc = x - x.mean(axis=0)
    se = np.sqrt(np.var(xc[:, :, None] * xc[:, None, :], axis=0) / x.shape[0])
    assert np.all(np.abs(emp - a) < 5 * se + 1e-12)
    assert np.all(np.abs(x.mean(axis=0) - of.mean_vector(m)) < 5 * x.std(axis=0) / 1000)


def test_sample_marks_examples():
    one = MarkModel(p=(1, 0, 0, 0, 0, 0), laws=(Constant(4.0),) * 6)
    assert np.array_equal(of.sample_marks(one, 1, 0), [[4.0, 0, 0, 0, 0, 0]])
    assert of.sample_marks(UNIFORM, 0, 0).shape == (0, 6)
    x = of.sample_marks(UNIFORM, 1_000_000, 2)
    assert np.all(np.abs(x.mean(axis=0) - 1 / 6) < 0.002)
    assert np.all((x > 0).sum(axis=1) == 1)
    with pytest.raises(ValueError):
        of.sample_marks(UNIFORM, -1, 0)


def test_invalid_simplex():
    with pytest.raises(ValueError):
        MarkModel(p=(0.5, 0.5, 0.5, 0, 0, 0))
    with pytest.raises(ValueError):
        MarkModel(p=(1.2, -0.2, 0, 0, 0, 0))


def test_sigma_factor_examples():
    assert np.allclose(of.sigma_factor(np.eye(6)), np.eye(6))
    d = np.diag([4.0, 1, 0, 0, 0, 0])
    assert np.allclose(of.sigma_factor(d), np.diag([2.0, 1, 0, 0, 0, 0]))
    a = of.long_run_covariance(UNIFORM)[2]
    s = of.sigma_factor(a)
    assert np.allclose(s, np.tril(s))
    assert np.linalg.norm(s @ s.T - a) / np.linalg.norm(a) < 1e-12
    bad = np.eye(6)
    bad[0, 1] = 0.5
    with pytest.raises(ValueError):
        of.sigma_factor(bad)


def test_psi_examples():
    s = of.sigma_factor(of.long_run_covariance(UNIFORM)[2])
    for conv in of.CONVENTIONS:
        psi = of.psi_matrix(s, of.mean_vector(UNIFORM), 1.0, 1.0, conv)
        assert np.allclose(np.diag(psi), 1 / 6, rtol=1e-13)
    assert np.array_equal(of.psi_matrix(np.zeros((6, 6)), np.zeros(6), 1.0, 2.0), np.zeros((6, 6)))
    v = np.array([1.0, 0, 0, 0, 0, 0])
    assert of.psi_matrix(np.zeros((6, 6)), v, 1.0, 2.0, "paper-psiij")[0, 0] == 8.0
    assert of.psi_matrix(np.zeros((6, 6)), v, 1.0, 2.0, "diffusion-theorem")[0, 0] == 2.0
    with pytest.raises(ValueError):
        of.psi_matrix(s, v, 1.0, 1.0, "nope")


def test_flow_moments_json_round_trip():
    fm = of.flow_moments(MarkModel.from_mean_vector(REF_VBAR), 2.0, 8.0, "counting-clt")
    back = of.FlowMoments.from_json(fm.to_json())
    for k in ("vbar", "v2", "rho", "a", "sigma", "psi"):
        assert np.array_equal(getattr(back, k), getattr(fm, k))
    assert (back.lam, back.vd2, back.convention) == (2.0, 8.0, "counting-clt")


@given(hnp.arrays(np.float64, (6, 6), elements=hs.floats(-2.0, 2.0)))
def test_sigma_factor_round_trip(m):
    a = m @ m.T
    s = of.sigma_factor(a)
    scale = max(np.linalg.norm(a), 1e-300)
    assert np.linalg.norm(s @ s.T - a) / scale < 1e-10
    # idempotent on its own output
    s2 = of.sigma_factor(s @ s.T)
    assert np.linalg.norm(s2 @ s2.T - s @ s.T) / scale < 1e-10


@given(hnp.arrays(np.float64, 6, elements=hs.floats(0.01, 1.0)),
       hnp.arrays(np.float64, 6, elements=hs.floats(0.1, 5.0)))
def test_covariance_psd_and_consistent(w, sizes):
    m = MarkModel.constant(sizes, w / w.sum())
    v2, rho, a = of.long_run_covariance(m)
    assert np.allclose(a, a.T)
    assert np.linalg.eigvalsh(a).min() > -1e-12 * max(1.0, np.abs(a).max())
    assert np.allclose(np.diag(a), v2)
    assert np.allclose(np.diag(rho), 1.0)
