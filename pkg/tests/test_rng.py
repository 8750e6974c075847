import numpy as np
from hypothesis import given
from hypothesis import strategies as hs

from orderpos import rng
from orderpos.kernels import numba_kernels, numpy_kernels
from orderpos.order_flow import Constant, Exponential, GeometricInteger, LogNormal, MarkModel


def test_uniforms_deterministic_and_open_interval():
    key = rng.stream_key(7, 3)
    u = rng.uniforms(key, np.arange(100_000))
    assert np.array_equal(u, rng.uniforms(rng.stream_key(7, 3), np.arange(100_000)))
    assert u.min() > 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 5 * np.sqrt(1 / 12 / u.size)


def test_streams_differ():
    a = rng.uniforms(rng.stream_key(1, 0), np.arange(1000))
    b = rng.uniforms(rng.stream_key(1, 1), np.arange(1000))
    c = rng.uniforms(rng.stream_key(2, 0), np.arange(1000))
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.15


@given(hs.integers(-2 ** 70, 2 ** 70), hs.integers(0, 2 ** 64 - 1), hs.integers(0, 2 ** 40))
def test_scalar_matches_vector(seed, stream, counter):
    key = rng.stream_key(seed, stream)
    assert rng.uniform_at(key, np.uint64(counter)) == rng.uniforms(key, np.array([counter]))[0]


def test_mark_kernels_agree_across_backends():
    model = MarkModel(p=(0.1, 0.2, 0.1, 0.25, 0.15, 0.2),
                      laws=(Constant(1.0), Exponential(2.0), GeometricInteger(3.0),
                            LogNormal(0.0, 0.5), Constant(5.0), Exponential(1.5)))
    cum, code, a, b = model.kernel_arrays()
    outs = []
    for mod in (numba_kernels, numpy_kernels):
        t = np.empty(5000, dtype=np.int64)
        s = np.empty(5000)
        mod.sample_marks(11, 4, 5000, cum, code, a, b, t, s)
        outs.append((t, s))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.allclose(outs[0][1], outs[1][1], rtol=1e-14, atol=0)
