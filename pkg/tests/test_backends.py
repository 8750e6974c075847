import os
import subprocess
import sys

import numpy as np
import pytest

from orderpos import diffusion, harness, lob_simulator, special
from orderpos import point_processes as pp
from orderpos.kernels import BACKEND, numba_kernels, numpy_kernels
from orderpos.order_flow import Exponential, MarkModel

MODULES = (diffusion, harness, lob_simulator, special, pp)


def run_both(monkeypatch, fn):
    """Evaluate ``fn`` under the numba kernels and again under the numpy kernels."""
    for mod in MODULES:
        monkeypatch.setattr(mod, "_k", numba_kernels)
    a = fn()
    for mod in MODULES:
        monkeypatch.setattr(mod, "_k", numpy_kernels)
    b = fn()
    return a, b


def test_default_backend_is_numba():
    assert BACKEND == "numba"


def test_chain_batch_backends_agree(monkeypatch):
    marks = MarkModel.from_mean_vector((1, .6, .8, 1, .7, .8))
    fn = lambda: lob_simulator.jump_chain_batch(marks, 50, (1.0, 1.0, 0.5), 40, seed=5,
                                                checkpoints=(10, 100))
    (ca, sa, va), (cb, sb, vb) = run_both(monkeypatch, fn)
    np.testing.assert_array_equal(ca, cb)
    np.testing.assert_allclose(sa, sb, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(va, vb)


def test_lob_run_backends_agree(monkeypatch):
    marks = MarkModel(p=(1 / 6,) * 6, laws=(Exponential(1.0),) * 6)
    cfg = lob_simulator.SimConfig(pp.Poisson(1.0), marks, n=100, qb0=1.0, qa0=1.0, z0=0.5,
                                  horizon=5.0, seed=3)
    a, b = run_both(monkeypatch, lambda: lob_simulator.simulate_path(cfg))
    np.testing.assert_array_equal(a.types, b.types)
    np.testing.assert_allclose(a.times, b.times, rtol=1e-13)
    np.testing.assert_allclose(a.sizes, b.sizes, rtol=1e-13)
    for x, y in ((a.qb, b.qb), (a.qa, b.qa), (a.z, b.z)):
        np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-9)
    assert a.tau == pytest.approx(b.tau, rel=1e-12)


def test_state_dependent_backends_agree(monkeypatch):
    marks = MarkModel.constant([1.0] * 6)
    cfg = lob_simulator.SimConfig(pp.LinearStateDependent(1.0, 0.1, 0.2), marks, n=50, qb0=1.0,
                                  qa0=1.0, z0=0.5, horizon=3.0, seed=2)
    a, b = run_both(monkeypatch, lambda: lob_simulator.simulate_path(cfg))
    np.testing.assert_array_equal(a.types, b.types)
    np.testing.assert_allclose(a.times, b.times, rtol=1e-12)


def test_exit_euler_backends_agree(monkeypatch):
    params = diffusion.DiffusionParams((0.1, -0.2), 1.0, 1.2, 0.4, 1.0, 1.5)
    fn = lambda: diffusion.exit_samples(params, 200, seed=9, method="euler", dt=1e-3, t_max=5.0)
    (ta, sa), (tb, sb) = run_both(monkeypatch, fn)
    np.testing.assert_array_equal(sa, sb)
    np.testing.assert_allclose(ta, tb, rtol=1e-9)


def test_sign_chain_backends_agree(monkeypatch):
    fn = lambda: harness.example1_demo(paths=1000, n=400, seed=4).statistics
    a, b = run_both(monkeypatch, fn)
    for key in a:
        np.testing.assert_allclose(a[key], b[key], rtol=1e-10)


def test_ive_backends_agree(monkeypatch):
    nu = np.linspace(0.0, 60.0, 41)[:, None]
    x = np.geomspace(1e-3, 500.0, 57)[None, :]
    a, b = run_both(monkeypatch, lambda: special.ive(nu, x))
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=0.0)


@pytest.mark.parametrize("spec", [pp.HawkesExp(1.0, 0.5, 2.0), pp.CoxShotNoiseExp(1.0, 0.5, 1.0, 0.5)])
def test_self_exciting_fallbacks_have_the_same_rate(monkeypatch, spec):
    # the numpy fallbacks draw from a different sampler, so compare laws, not paths
    fn = lambda: np.mean([len(pp.simulate_arrivals(spec, 200.0, seed=s)) / 200.0 for s in range(30)])
    a, b = run_both(monkeypatch, fn)
    rate = pp.stationary_rate(spec)
    assert abs(a - rate) < 0.1 * rate and abs(b - rate) < 0.1 * rate


def _run_with_backend(value, code):
    env = dict(os.environ, ORDERPOS_BACKEND=value)
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                          timeout=300)


def test_numpy_backend_selected_by_environment():
    code = ("from orderpos.kernels import BACKEND; from orderpos.fluid import FluidParams, fluid_tau;"
            "print(BACKEND, fluid_tau(FluidParams(1, (1, .6, .8, 1, .7, .8), 100, 100, 100)))")
    res = _run_with_backend("numpy", code)
    assert res.returncode == 0, res.stderr
    backend, tau = res.stdout.split()
    assert backend == "numpy" and abs(float(tau) - 100.0) < 1e-9


def test_unknown_backend_rejected():
    res = _run_with_backend("fortran", "import orderpos.kernels")
    assert res.returncode != 0 and "ORDERPOS_BACKEND" in res.stderr
