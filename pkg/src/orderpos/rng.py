"""Counter-based random streams keyed by (master seed, stream id).

Every uniform is a pure function of ``(seed, stream, counter)``, so a path
draws the same numbers regardless of scheduling, worker count or backend.
The mixing function is the SplitMix64 finalizer; the numba kernels carry
compiled copies of the scalar functions below and the vectorized numpy code
evaluates the identical integer recipe.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_SALT = np.uint64(0x632BE59BD9B4E019)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
INV53 = 1.0 / 9007199254740992.0


def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def key_of(seed, stream):
    """Stream key for ``(seed, stream)``; both arguments are uint64."""
    return mix64(seed ^ mix64(stream + _STREAM_SALT))


def uniform_at(key, counter):
    """Uniform on the open interval (0, 1) at position ``counter`` (uint64)."""
    with np.errstate(over="ignore"):
        x = mix64(np.uint64(key) + (np.uint64(counter) + _ONE) * GOLDEN)
    return (np.float64(x >> _S11) + 0.5) * INV53


def as_u64(value):
    """Reduce a Python integer (possibly negative or > 2**64) to a uint64."""
    return np.uint64(int(value) & 0xFFFFFFFFFFFFFFFF)


def stream_key(seed, stream):
    with np.errstate(over="ignore"):
        return np.uint64(key_of(as_u64(seed), as_u64(stream)))


def _mix64_array(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def uniforms(key, counters):
    """Vectorized :func:`uniform_at` over an integer array of counters."""
    c = np.asarray(counters).astype(np.uint64)
    with np.errstate(over="ignore"):
        x = _mix64_array(np.uint64(key) + (c + _ONE) * GOLDEN)
    return ((x >> _S11).astype(np.float64) + 0.5) * INV53


def generator(seed, stream, salt=0):
    """A ``numpy.random.Generator`` (Philox) keyed by ``(seed, stream, salt)``.

    Used for auxiliary vectorized draws (Gamma, Poisson, normals) where bit
    equality with a numba loop is not required.
    """
    key = int(stream_key(seed, stream))
    return np.random.Generator(np.random.Philox(key=[key, int(salt) & 0xFFFFFFFFFFFFFFFF]))
