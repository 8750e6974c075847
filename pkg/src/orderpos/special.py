"""Special functions used by the analytic engines.

Modified Bessel functions of the first kind, the standard normal CDF and the
Kolmogorov distribution are implemented here rather than borrowed, so that the
first-passage formulas do not depend on a particular library's conventions.
scipy is used only as an independent oracle in the tests.
"""

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .kernels import active as _k

DEBYE_TERMS = 12
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# --------------------------------------------------------------------------
# Bessel I
# --------------------------------------------------------------------------

def _poly_deriv(c):
    return [k * c[k] for k in range(1, len(c))] or [Fraction(0)]


def _poly_mul(a, b):
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return out


def _poly_add(a, b):
    n = max(len(a), len(b))
    return [(a[i] if i < len(a) else 0) + (b[i] if i < len(b) else 0) for i in range(n)]


@lru_cache(maxsize=None)
def debye_coefficients(terms=DEBYE_TERMS):
    """Polynomials u_k(p) of the uniform large-order expansion, as a 2-D array.

    Row k holds the coefficients of u_k in increasing powers of p, generated
    exactly with rational arithmetic from

        u_{k+1}(p) = p^2 (1 - p^2) u_k'(p) / 2 + (1/8) int_0^p (1 - 5 t^2) u_k(t) dt.
    """
    polys = [[Fraction(1)]]
    for _ in range(terms - 1):
        u = polys[-1]
        first = _poly_mul([Fraction(0), Fraction(0), Fraction(1, 2), Fraction(0), Fraction(-1, 2)],
                          _poly_deriv(u))
        integrand = _poly_mul([Fraction(1), Fraction(0), Fraction(-5)], u)
        second = [Fraction(0)] + [integrand[k] / (8 * (k + 1)) for k in range(len(integrand))]
        polys.append(_poly_add(first, second))
    width = max(len(p) for p in polys)
    out = np.zeros((terms, width))
    for k, p in enumerate(polys):
        out[k, : len(p)] = [float(x) for x in p]
    out.setflags(write=False)
    return out


def ive(nu, x):
    """Exponentially scaled modified Bessel function ``I_nu(x) * exp(-x)``.

    Parameters
    ----------
    nu : array_like
        Real order, ``nu >= 0``.
    x : array_like
        Nonnegative argument.

    Notes
    -----
    Power series (renormalized against overflow) when ``x <= max(30, nu^2/4)``
    and ``nu < 50``; otherwise the uniform large-order expansion, except for
    ``nu < 1`` where the large-argument Hankel expansion is used.
    """
    nu_b, x_b = np.broadcast_arrays(np.asarray(nu, dtype=np.float64), np.asarray(x, dtype=np.float64))
    if np.any(nu_b < 0.0) or np.any(x_b < 0.0):
        raise ValueError("ive requires nu >= 0 and x >= 0")
    flat_nu = np.ascontiguousarray(nu_b).ravel()
    flat_x = np.ascontiguousarray(x_b).ravel()
    out = np.empty(flat_x.shape)
    _k.ive_many(flat_nu, flat_x, debye_coefficients(), out)
    if np.ndim(nu_b) == 0:
        return float(out[0])
    return out.reshape(nu_b.shape)


def iv(nu, x):
    """Modified Bessel function of the first kind ``I_nu(x)``."""
    return ive(nu, x) * np.exp(x)


# --------------------------------------------------------------------------
# standard normal
# --------------------------------------------------------------------------

def _phi_series(x):
    # Phi(x) = 1/2 + phi(x) * sum x^(2k+1) / (2k+1)!!
    term = x
    total = x
    k = 0
    while abs(term) > 1e-17 * abs(total):
        k += 1
        term *= x * x / (2 * k + 1)
        total += term
    return 0.5 + _INV_SQRT_2PI * math.exp(-0.5 * x * x) * total


def _mills_tail(x):
    # upper tail 1 - Phi(x) for x > 0 via the Mills-ratio continued fraction (modified Lentz)
    tiny = 1e-300
    f = x if x != 0.0 else tiny
    c = f
    d = 0.0
    k = 1
    while True:
        a = float(k)
        d = x + a * d
        d = tiny if d == 0.0 else d
        c = x + a / c
        c = tiny if c == 0.0 else c
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16 or k > 5000:
            break
        k += 1
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x) / f


def _norm_cdf_scalar(x):
    if math.isnan(x):
        return math.nan
    if x == math.inf:
        return 1.0
    if x == -math.inf:
        return 0.0
    if abs(x) <= 3.0:
        return _phi_series(x)
    if x < 0.0:
        return _mills_tail(-x)
    return 1.0 - _mills_tail(x)


def _norm_sf_scalar(x):
    if math.isnan(x):
        return math.nan
    if x > 3.0:
        return 0.0 if x == math.inf else _mills_tail(x)
    return 1.0 - _norm_cdf_scalar(x) if x >= 0.0 else _norm_cdf_scalar(-x)


norm_cdf = np.vectorize(_norm_cdf_scalar, otypes=[np.float64])
norm_cdf.__doc__ = "Standard normal CDF Phi(x), elementwise."
norm_sf = np.vectorize(_norm_sf_scalar, otypes=[np.float64])
norm_sf.__doc__ = "Standard normal upper tail 1 - Phi(x), accurate for large x."


# --------------------------------------------------------------------------
# Kolmogorov distribution and the one-sample KS test
# --------------------------------------------------------------------------

def kolmogorov_sf(x, tol=1e-10):
    """P(K > x) for the limiting Kolmogorov distribution."""
    if x <= 0.0:
        return 1.0
    if x < 1.0:
        # Jacobi theta form converges quickly for small x
        s = 0.0
        k = 1
        c = math.pi ** 2 / (8.0 * x * x)
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * c)
            s += term
            if term < tol * max(s, 1e-300):
                break
            k += 1
        return max(0.0, min(1.0, 1.0 - math.sqrt(2.0 * math.pi) / x * s))
    s = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * x * x)
        s += term if k % 2 else -term
        if term < tol:
            break
        k += 1
    return max(0.0, min(1.0, 2.0 * s))


def ks_test(sample, cdf):
    """One-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    Returns ``(statistic, p_value)``.
    """
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    f = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - f)), float(np.max(f - (i - 1) / n)))
    return d, kolmogorov_sf(math.sqrt(n) * d)
