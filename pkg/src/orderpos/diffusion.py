"""Second-order analytics: the diffusion limit of the two queues and the
fluctuations of the order position.

The centred queue sizes converge to a planar Brownian motion with drift ``mu``
and covariance ``sigma sigma^T`` started at ``(q^b, q^a)``.  Whitening by
``sigma^{-1}`` maps the positive quadrant onto a wedge of angle ``alpha`` in
which the process is a standard Brownian motion; first-exit quantities are
then Bessel series in polar coordinates ``(r0, theta0)``.  Side ``theta = 0``
of the wedge is the ask queue hitting zero and side ``theta = alpha`` the bid
queue hitting zero (a price decrease).
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .fluid import FluidParams, fluid_hitting_times, fluid_position, fluid_queues
from .kernels import active as _k
from .order_flow import FlowMoments
from .rng import generator
from .special import ive, norm_cdf, norm_sf

A_MATRIX = np.array([[1.0, -1.0, -1.0, 0.0, 0.0, 0.0],
                     [0.0, 0.0, 0.0, 1.0, -1.0, -1.0]])

SURVIVAL_TERM_CAP = 200
SURVIVAL_TERM_LIMIT = 20_000
_THETA_NODES = 448
_GAUSS_CUT = 9.0          # exp(-9^2/2) ~ 2.6e-18
_ZERO_DRIFT_RTOL = 1e-14


class SeriesError(RuntimeError):
    """A Bessel series did not reach its tolerance within the term cap."""

    def __init__(self, message, partial_sum, bound, terms):
        super().__init__(f"{message} (partial sum {partial_sum:.17g}, last term bound {bound:.3e}, "
                         f"{terms} terms)")
        self.partial_sum = partial_sum
        self.bound = bound
        self.terms = terms


class QuadratureError(RuntimeError):
    """A quadrature refinement did not stabilise; carries the achieved estimate."""

    def __init__(self, message, value, error_estimate):
        super().__init__(f"{message} (value {value:.17g}, error estimate {error_estimate:.3e})")
        self.value = value
        self.error_estimate = error_estimate


class BranchError(ValueError):
    """The closed form is not defined for these fluid parameters."""


# --------------------------------------------------------------------------
# parameters and geometry
# --------------------------------------------------------------------------

def wedge_angle(rho):
    """Opening angle of the whitened quadrant, case by case on the sign of rho."""
    if rho > 0:
        return math.pi + math.atan(-math.sqrt(1.0 - rho * rho) / rho)
    if rho == 0:
        return math.pi / 2.0
    return math.atan(-math.sqrt(1.0 - rho * rho) / rho)


def initial_radius(qb, qa, s1, s2, rho):
    u, v = qb / s1, qa / s2
    return math.sqrt((u * u + v * v - 2.0 * rho * u * v) / (1.0 - rho * rho))


def initial_angle(qb, qa, s1, s2, rho):
    den = qb / s1 - rho * qa / s2
    num = (qa / s2) * math.sqrt(1.0 - rho * rho)
    if den > 0:
        return math.atan(num / den)
    if den == 0:
        return math.pi / 2.0
    return math.pi + math.atan(num / den)


@dataclass(frozen=True)
class DiffusionParams:
    """Drifted planar Brownian motion for the (bid, ask) queue fluctuations.

    Parameters
    ----------
    mu : tuple
        Drift ``(mu1, mu2)`` of the (bid, ask) pair.
    sigma1, sigma2, rho : float
        Marginal volatilities and correlation, ``sigma sigma^T`` has entries
        ``sigma1^2``, ``rho sigma1 sigma2``, ``sigma2^2``.
    qb, qa : float
        Starting point.
    psi : ndarray, optional
        The 6x6 flow covariance the parameters were derived from.
    """

    mu: tuple
    sigma1: float
    sigma2: float
    rho: float
    qb: float
    qa: float
    psi: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "mu", (float(self.mu[0]), float(self.mu[1])))
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("sigma1 and sigma2 must be positive")
        if not abs(self.rho) < 1:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        if not (self.qb > 0 and self.qa > 0):
            raise ValueError("starting queues must be positive")

    @classmethod
    def from_covariance(cls, mu, cov, qb, qa, psi=None):
        cov = np.asarray(cov, dtype=float)
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ValueError("covariance must be symmetric")
        eig = np.linalg.eigvalsh(cov)
        if eig[0] <= 0:
            raise ValueError(f"covariance not positive definite: eigenvalue {eig[0]:.6e}")
        s1, s2 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
        return cls(mu=tuple(mu), sigma1=s1, sigma2=s2, rho=float(cov[0, 1] / (s1 * s2)),
                   qb=float(qb), qa=float(qa), psi=psi)

    @property
    def cov(self):
        c = self.rho * self.sigma1 * self.sigma2
        return np.array([[self.sigma1 ** 2, c], [c, self.sigma2 ** 2]])

    @property
    def sigma(self):
        """Upper-triangular factor with ``sigma @ sigma.T == cov``."""
        return np.array([[self.sigma1 * math.sqrt(1.0 - self.rho ** 2), self.sigma1 * self.rho],
                         [0.0, self.sigma2]])

    @property
    def alpha(self):
        return wedge_angle(self.rho)

    @property
    def r0(self):
        return initial_radius(self.qb, self.qa, self.sigma1, self.sigma2, self.rho)

    @property
    def theta0(self):
        return initial_angle(self.qb, self.qa, self.sigma1, self.sigma2, self.rho)

    def nu(self, n):
        return np.asarray(n) * math.pi / self.alpha

    @property
    def start_whitened(self):
        """``sigma^{-1} (q^b, q^a)``; ``theta = 0`` is the ask side."""
        s = math.sqrt(1.0 - self.rho ** 2)
        return ((self.qb / self.sigma1 - self.rho * self.qa / self.sigma2) / s, self.qa / self.sigma2)

    @property
    def kappa(self):
        """Whitened drift ``sigma^{-1} mu``."""
        s = math.sqrt(1.0 - self.rho ** 2)
        m1, m2 = self.mu
        return ((m1 / self.sigma1 - self.rho * m2 / self.sigma2) / s, m2 / self.sigma2)

    @property
    def exponent_coefficients(self):
        """``(l1, ..., l5)`` of the change of measure to the driftless wedge."""
        s1, s2, r = self.sigma1, self.sigma2, self.rho
        m1, m2 = self.mu
        w = 1.0 - r * r
        l1 = (-m1 * s2 + r * m2 * s1) / (w * s1 * s1 * s2)
        l2 = (r * m1 * s2 - m2 * s1) / (w * s2 * s2 * s1)
        l3 = l1 * l1 * s1 * s1 / 2 + r * l1 * l2 * s1 * s2 + l2 * l2 * s2 * s2 / 2 + l1 * m1 + l2 * m2
        l4 = l1 * s1 + r * l2 * s2
        l5 = l2 * s2 * math.sqrt(w)
        return l1, l2, l3, l4, l5

    @property
    def zero_drift(self):
        scale = max(self.sigma1, self.sigma2)
        return abs(self.mu[0]) <= _ZERO_DRIFT_RTOL * scale and abs(self.mu[1]) <= _ZERO_DRIFT_RTOL * scale

    @property
    def may_never_exit(self):
        """True when a drift component is positive.

        The exit time can then be infinite with positive probability, so
        survival values include the event of never leaving the quadrant and the
        two exit-side probabilities need not sum to one.
        """
        return self.mu[0] > 0 or self.mu[1] > 0

    def swapped(self):
        """The same process with the roles of bid and ask exchanged."""
        return DiffusionParams(mu=(self.mu[1], self.mu[0]), sigma1=self.sigma2, sigma2=self.sigma1,
                               rho=self.rho, qb=self.qa, qa=self.qb, psi=self.psi)

    def to_dict(self):
        return {"mu": list(self.mu), "sigma_cov": self.cov.tolist(), "rho": self.rho,
                "sigma1": self.sigma1, "sigma2": self.sigma2, "alpha": self.alpha,
                "r0": self.r0, "theta0": self.theta0, "may_never_exit": self.may_never_exit}


def derive_diffusion_params(moments: FlowMoments, qb, qa):
    """Drift ``lam A vbar`` and covariance ``A psi A^T`` of the queue pair."""
    mu = moments.lam * A_MATRIX @ np.asarray(moments.vbar, dtype=float)
    cov = A_MATRIX @ np.asarray(moments.psi, dtype=float) @ A_MATRIX.T
    cov = 0.5 * (cov + cov.T)
    return DiffusionParams.from_covariance(mu, cov, qb, qa, psi=np.asarray(moments.psi))


# --------------------------------------------------------------------------
# survival P(iota > t)
# --------------------------------------------------------------------------

def _gl(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _composite_gl(lo, hi, panels, order=16):
    x, w = _gl(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _radial_nodes(lo, hi, width, order=16):
    """Composite GL on [lo, hi]; geometric grading towards r = 0 when lo == 0.

    Near the wedge tip the radial integrands behave like ``r^(nu_1 - 1)`` with
    a fractional exponent, which uniform panels resolve only algebraically.
    """
    panels = max(4, int(math.ceil((hi - lo) / width)))
    r, w = _composite_gl(lo, hi, panels, order)
    if lo > 0:
        return r, w
    h = (hi - lo) / panels
    keep = r > h
    x, wx = _gl(order)
    edges = h * 0.5 ** np.arange(0, 41)
    a, b = edges[1:], edges[:-1]
    gr = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * x[None, :]
    gw = (0.5 * (b - a))[:, None] * wx[None, :]
    return np.concatenate([gr.ravel(), r[keep]]), np.concatenate([gw.ravel(), w[keep]])


def _first_converged(terms, envelope, tol):
    """Index after which the series is truncated, or None."""
    partial = np.cumsum(terms)
    ok = envelope <= tol * np.maximum(np.abs(partial), 1e-300)
    hits = np.flatnonzero(ok)
    return None if hits.size == 0 else int(hits[0])


def _small_time_bracket(p, t, tol):
    # union bound over the two boundary lines: 1 - p1 - p2 <= P(iota > t) <= 1
    d1 = p.r0 * math.sin(p.theta0)
    d2 = p.r0 * math.sin(p.alpha - p.theta0)
    kx, ky = p.kappa
    # drift components pointing away from each line, in whitened units
    m1 = ky
    m2 = kx * math.sin(p.alpha) - ky * math.cos(p.alpha)
    return _line_hit(d1, m1, t) + _line_hit(d2, m2, t)


def _line_hit(d, m, t):
    """P(a unit BM with drift m away from a line at distance d reaches it by t)."""
    st = math.sqrt(t)
    first = float(norm_cdf((-d - m * t) / st))
    expo = -2.0 * m * d
    second = float(norm_cdf((-d + m * t) / st))
    if second == 0.0:
        return first
    return first + math.exp(min(expo + math.log(second), 700.0))


def _series_length(p, x, tol, cap):
    """Terms needed so that the Bessel factors I_nu(x) e^{-x} fall below ``tol``."""
    if cap is not None:
        return int(cap)
    # I_nu(x) e^{-x} ~ exp(-nu^2 / (2x)) for nu well below x and decays faster beyond
    nu_max = math.sqrt(2.0 * x * (math.log(1.0 / tol) + 10.0)) + 30.0
    need = int(math.ceil(nu_max * p.alpha / math.pi)) + 1
    return max(SURVIVAL_TERM_CAP, min(need, SURVIVAL_TERM_LIMIT))


def _survival_zero_drift(p, t, tol, cap):
    alpha, theta0, r0 = p.alpha, p.theta0, p.r0
    x = r0 * r0 / (4.0 * t)
    cap = _series_length(p, x, tol, cap)
    n = 2 * np.arange(cap) + 1.0
    nu = n * math.pi / alpha
    bess = ive((nu - 1.0) / 2.0, x) + ive((nu + 1.0) / 2.0, x)
    pref = 2.0 * r0 / math.sqrt(2.0 * math.pi * t)
    terms = pref * np.sin(nu * theta0) * bess / n
    env = pref * bess / n
    k = _first_converged(terms, env, tol)
    if k is None:
        miss = _small_time_bracket(p, t, tol)
        if miss <= tol:
            return 1.0 - miss
        raise SeriesError("zero-drift survival series did not converge", float(terms.sum()),
                          float(env[-1]), cap)
    return float(np.sum(terms[: k + 1]))


def _survival_drift(p, t, tol, cap):
    alpha, theta0, r0 = p.alpha, p.theta0, p.r0
    l1, l2, l3, l4, l5 = p.exponent_coefficients
    knorm = math.hypot(*p.kappa)
    st = math.sqrt(t)
    lo = max(0.0, r0 - knorm * t - _GAUSS_CUT * st)
    hi = r0 + knorm * t + _GAUSS_CUT * st
    r, wr = _radial_nodes(lo, hi, 0.5 * st)
    cap = _series_length(p, hi * r0 / t, tol, cap)
    xt, wt = _gl(_THETA_NODES)
    th = 0.5 * alpha * (xt + 1.0)
    wth = 0.5 * alpha * wt
    # exponent of the measure change on the polar grid, folded with all scalar factors
    ang = l4 * np.sin(th - alpha) - l5 * np.cos(th - alpha)
    base = l1 * p.qb + l2 * p.qa + l3 * t - (r - r0) ** 2 / (2.0 * t)
    shift = np.max(base[:, None] + r[:, None] * ang[None, :])
    expo = np.exp(base[:, None] + r[:, None] * ang[None, :] - shift)
    n = np.arange(1, cap + 1, dtype=float)
    nu = n * math.pi / alpha
    sines = np.sin(nu[None, :] * th[:, None]) * wth[:, None]
    h = expo @ sines                                        # (r, n)
    hmax = expo @ wth                                       # (r,)
    bess = ive(nu[None, :], (r * r0 / t)[:, None])           # (r, n)
    radial = (wr * r)[:, None] * bess
    scale = 2.0 / (alpha * t) * math.exp(shift)
    terms = scale * np.sin(nu * theta0) * np.sum(radial * h, axis=0)
    env = scale * np.sum(radial * hmax[:, None], axis=0)
    k = _first_converged(terms, env, tol)
    if k is None:
        miss = _small_time_bracket(p, t, tol)
        if miss <= tol:
            return 1.0 - miss
        raise SeriesError("drifted survival series did not converge", float(terms.sum()),
                          float(env[-1]), cap)
    return float(np.sum(terms[: k + 1]))


def survival_probability(params: DiffusionParams, t, series_tolerance=1e-10, method="auto",
                         max_terms=None):
    """P(iota > t), the probability that neither queue has depleted by time t.

    Parameters
    ----------
    params : DiffusionParams
    t : float
        Positive time.
    series_tolerance : float
        A series is cut at the first term whose envelope falls below this
        fraction of the partial sum.
    method : {"auto", "drift", "zero-drift"}
        ``"auto"`` picks the zero-drift Bessel series when ``mu == 0``.
        ``"drift"`` forces the general change-of-measure formula.
    max_terms : int, optional
        Series length.  By default it is sized from the Bessel argument, at
        least ``SURVIVAL_TERM_CAP`` and at most ``SURVIVAL_TERM_LIMIT``.

    Returns
    -------
    float
        Clipped to [0, 1].  When ``params.may_never_exit`` the value includes
        the probability that the process never leaves the quadrant.

    Raises
    ------
    SeriesError
        When ``max_terms`` terms are not enough.  For zero drift and very
        small ``t`` the series is replaced by a one-sided bound first.
    """
    t = float(t)
    if not t > 0:
        raise ValueError("t must be positive")
    if method == "auto":
        method = "zero-drift" if params.zero_drift else "drift"
    if method == "zero-drift":
        if not params.zero_drift:
            raise ValueError("zero-drift series requested for a drifted process")
        val = _survival_zero_drift(params, t, series_tolerance, max_terms)
    elif method == "drift":
        val = _survival_drift(params, t, series_tolerance, max_terms)
    else:
        raise ValueError(f"unknown method {method!r}")
    return min(1.0, max(0.0, val))


def survival_curve(params, times, series_tolerance=1e-10, method="auto"):
    """Survival on a grid, checked to be nonincreasing up to the series tolerance."""
    times = np.asarray(times, dtype=float)
    order = np.argsort(times)
    vals = np.array([survival_probability(params, t, series_tolerance, method) for t in times])
    rise = np.diff(vals[order])
    if rise.size and rise.max() > 10 * series_tolerance + 1e-12:
        warnings.warn(f"survival curve increases by {rise.max():.3e}; series accuracy is insufficient",
                      RuntimeWarning)
    return vals


# --------------------------------------------------------------------------
# price decrease P(bid side hit first)
# --------------------------------------------------------------------------

def _decrease_integral(p, level, tol, cap):
    alpha, theta0, r0 = p.alpha, p.theta0, p.r0
    kx, ky = p.kappa
    x0, y0 = p.start_whitened
    k2 = kx * kx + ky * ky
    k_ray = kx * math.cos(alpha) + ky * math.sin(alpha)
    decay = 0.5 * (k2 - max(k_ray, 0.0) ** 2)
    d_side = r0 * math.sin(alpha - theta0)
    t_min = min(d_side, r0) ** 2 / 90.0
    t_max = 1e8 * r0 * r0
    if decay > 0:
        t_max = min(t_max, 90.0 / decay)
    decades = math.log10(t_max / t_min)
    ut, wu = _composite_gl(math.log(t_min), math.log(t_max), max(4, int(math.ceil(2 * level * decades))),
                           order=12)
    tt = np.exp(ut)
    knorm = math.sqrt(k2)
    rows_r, rows_w, rows_t = [], [], []
    for t, w in zip(tt, wu * tt):
        st = math.sqrt(t)
        lo = max(0.0, r0 - knorm * t - _GAUSS_CUT * st)
        hi = r0 + knorm * t + _GAUSS_CUT * st
        r, wr = _radial_nodes(lo, hi, max(st / level, (hi - lo) / 400), order=8)
        rows_r.append(r)
        rows_w.append(wr * w)
        rows_t.append(np.full(r.shape, t))
    r = np.concatenate(rows_r)
    w = np.concatenate(rows_w)
    t = np.concatenate(rows_t)
    keep = r > 0
    r, w, t = r[keep], w[keep], t[keep]
    logf = (kx * (r * math.cos(alpha) - x0) + ky * (r * math.sin(alpha) - y0) - 0.5 * k2 * t
            - (r - r0) ** 2 / (2.0 * t))
    weight = w * math.pi / (alpha * alpha) / (t * r) * np.exp(logf)
    arg = r * r0 / t
    total = 0.0
    for n in range(1, cap + 1):
        nu = n * math.pi / alpha
        b = ive(nu, arg)
        env = n * float(np.sum(weight * b))
        total += n * math.sin(nu * (alpha - theta0)) * float(np.sum(weight * b))
        if env <= tol * 1e-2 and n > 1:
            return total, n
    raise SeriesError("price-decrease Bessel series did not converge", total, env, cap)


def price_decrease_probability(params: DiffusionParams, quad_tolerance=1e-6, max_terms=400,
                               max_level=16):
    """P(the bid queue depletes before the ask queue).

    Zero drift gives ``theta0 / alpha``.  Otherwise the exit density through
    the bid side of the driftless wedge is reweighted by the change of measure
    and integrated over exit time and radius; the grid is refined until two
    successive levels agree within ``quad_tolerance``.
    """
    if params.zero_drift:
        return params.theta0 / params.alpha
    prev, _ = _decrease_integral(params, 1, quad_tolerance, max_terms)
    level = 2
    while level <= max_level:
        cur, _ = _decrease_integral(params, level, quad_tolerance, max_terms)
        if abs(cur - prev) <= quad_tolerance:
            return min(1.0, max(0.0, cur))
        prev = cur
        level *= 2
    raise QuadratureError("price-decrease quadrature did not stabilise", prev, abs(cur - prev))


# --------------------------------------------------------------------------
# exit simulation
# --------------------------------------------------------------------------

def _first_passage(rng, x0, drift, size):
    """Hitting time of 0 for ``x0 + drift t + W_t``; inf when it escapes."""
    if drift == 0.0:
        z = rng.standard_normal(size)
        return x0 * x0 / (z * z)
    times = rng.wald(x0 / abs(drift), x0 * x0, size)
    if drift > 0:
        escape = rng.random(size) >= math.exp(-2.0 * drift * x0)
        times[escape] = math.inf
    return times


def exit_samples(params: DiffusionParams, paths, seed=0, stream=0, method="auto", dt=1e-4,
                 t_max=10.0):
    """Simulate first exits from the quadrant.

    Returns
    -------
    times : ndarray
        Exit times, ``inf`` when no exit happened (within ``t_max`` for Euler).
    sides : ndarray of int8
        1 for the bid side (price decrease), 0 for the ask side, -1 for none.

    Notes
    -----
    ``method="exact"`` (the default for ``rho == 0``) draws the two
    independent first-passage times of the coordinates directly.  ``"euler"``
    runs a Brownian-bridge corrected Euler scheme in the whitened wedge.
    """
    if method == "auto":
        method = "exact" if params.rho == 0 else "euler"
    if method == "exact":
        if params.rho != 0:
            raise ValueError("exact sampler needs rho == 0")
        rng = generator(seed, stream, salt=7)
        tb = _first_passage(rng, params.qb / params.sigma1, params.mu[0] / params.sigma1, paths)
        ta = _first_passage(rng, params.qa / params.sigma2, params.mu[1] / params.sigma2, paths)
        times = np.minimum(tb, ta)
        sides = np.where(tb < ta, 1, 0).astype(np.int8)
        sides[~np.isfinite(times)] = -1
        return times, sides
    if method != "euler":
        raise ValueError(f"unknown method {method!r}")
    x0, y0 = params.start_whitened
    kx, ky = params.kappa
    times = np.empty(paths)
    sides = np.empty(paths, dtype=np.int64)
    _k.exit_euler(np.uint64(seed), np.uint64(stream), paths, x0, y0, kx, ky, params.alpha, dt,
                  t_max, times, sides)
    # kernel side 0 is theta = 0 (ask), side 1 is theta = alpha (bid)
    return times, sides.astype(np.int8)


# --------------------------------------------------------------------------
# fluctuations of the order position
# --------------------------------------------------------------------------

VD2_POWER = {"diffusion-theorem": 1, "paper-psiij": 3, "counting-clt": 0}


def _fluct_setup(fluid: FluidParams, t):
    tau_a, tau_b, tau_z = fluid_hitting_times(fluid)
    if t < 0 or t >= tau_z:
        raise ValueError(f"t = {t} outside [0, tau_z = {tau_z})")
    return tau_z


class _Weights:
    """Kernels of the linear map from flow fluctuations to Y(t)."""

    def __init__(self, fluid: FluidParams):
        self.f = fluid
        self.l3 = fluid.lam * fluid.vbar[2]
        self.vb = fluid.vb

    def q(self, s):
        return fluid_queues(self.f, s)[0]

    def ratio(self, s):
        return float(fluid_position(self.f, s)) / float(self.q(s))

    def decay(self, u, s):
        """exp(-int_u^s lam vbar3 / Q^b)."""
        if self.l3 == 0:
            return 1.0
        if self.vb == 0:
            return math.exp(-self.l3 * (s - u) / self.f.qb)
        qu = self.q(u)
        return math.exp(self.f.vbar[2] / self.vb * math.log1p(-self.f.lam * self.vb * (s - u) / qu))

    def drift(self, s):
        """Z lam vbar3 / Q^2, the feedback weight of the bid fluctuation."""
        q = float(self.q(s))
        return float(fluid_position(self.f, s)) * self.l3 / (q * q)


def _quad(f, a, b):
    if b <= a:
        return 0.0
    val, _ = quad(f, a, b, epsabs=0.0, epsrel=1e-11, limit=200)
    return val


def _variance_quadrature(fluid, psi, t):
    w = _Weights(fluid)
    p12 = psi[0, 1] - psi[1, 1] - psi[2, 1]
    p13 = psi[0, 2] - psi[1, 2] - psi[2, 2]
    phi = psi[0, 0] + psi[1, 1] + psi[2, 2] - 2 * psi[0, 1] - 2 * psi[0, 2] + 2 * psi[1, 2]

    def cov_yd(s):
        a = _quad(lambda u: w.decay(u, s), 0.0, s)
        b = _quad(lambda u: w.decay(u, s) * w.ratio(u), 0.0, s)
        c = _quad(lambda u: w.decay(u, s) * w.drift(u) * u, 0.0, s)
        return -p12 * a - p13 * b + phi * c

    def direct(s):
        z = w.ratio(s)
        return w.decay(s, t) ** 2 * (psi[1, 1] + 2 * z * psi[1, 2] + z * z * psi[2, 2])

    def feedback(s):
        return w.decay(s, t) ** 2 * 2.0 * w.drift(s) * cov_yd(s)

    return _quad(direct, 0.0, t) + _quad(feedback, 0.0, t)


def _variance_isometry(fluid, psi, t):
    w = _Weights(fluid)
    block = psi[:3, :3]

    def integrand(u):
        g = _quad(lambda s: w.decay(s, t) * w.drift(s), u, t)
        e = w.decay(u, t)
        vec = np.array([g, -e - g, -e * w.ratio(u) - g])
        return float(vec @ block @ vec)

    return _quad(integrand, 0.0, t)


@dataclass(frozen=True)
class FluctuationConstants:
    """Constants of the closed-form variance, valid for ``c < 0``, ``c != -1``."""

    lam: float
    vbar: tuple
    a: float
    b: float
    c: float
    z: float
    phi: float
    alpha_c: float
    beta_c: float
    gamma_c: float
    delta_c: float
    alpha_h: float
    beta_h: float
    gamma_h: float
    delta_h: float
    eta_h: float
    sigma: np.ndarray = field(repr=False)
    vd2_coef: float = 0.0

    @classmethod
    def build(cls, fluid: FluidParams, moments: FlowMoments, variant="published"):
        """Evaluate the constants.

        ``variant="published"`` uses the printed constant term of ``beta_h``,
        ``-b^(1/c+1)/(1+c)``.  ``variant="corrected"`` multiplies it by
        ``alpha_c``, the value forced by ``E[Y(0) D(0)] = 0``.
        """
        if variant not in ("published", "corrected"):
            raise ValueError(f"unknown variant {variant!r}")
        a, b, c, z = fluid.a, fluid.b, fluid.c, fluid.z
        if not (c < 0) or abs(c + 1.0) < 1e-12:
            raise BranchError(f"closed form needs c < 0 and c != -1 (c = {c}); use mode='quadrature'")
        psi = np.asarray(moments.psi)
        lam = moments.lam
        lv3 = lam * fluid.vbar[2]
        kk = z + a * b / (1 + c)
        e = 1.0 / c
        phi = (psi[0, 0] + psi[1, 1] + psi[2, 2] - psi[0, 1] - psi[0, 2] - psi[1, 0] - psi[2, 0]
               + psi[1, 2] + psi[2, 1])
        alpha_c = (-(psi[0, 1] - psi[1, 1] - psi[2, 1]) + (psi[0, 2] - psi[1, 2] - psi[2, 2]) * a / ((1 + c) * lv3)
                   - a * phi / (c * (1 + c) * lv3))
        beta_c = (-(psi[0, 2] - psi[1, 2] - psi[2, 2]) * kk * b ** e / lv3 + kk * phi * b ** e / (c * lv3))
        gamma_c = a * b * phi / (c * (1 + c) * lv3)
        delta_c = -phi * kk * b ** (e + 1) / (c * lv3)
        alpha_h = alpha_c / (c + 1)
        lead = alpha_c if variant == "corrected" else 1.0
        beta_h = -lead * b ** (e + 1) / (1 + c) - gamma_c * b ** e + delta_c / (b * c) - beta_c * math.log(b) / c
        return cls(lam=lam, vbar=tuple(fluid.vbar), a=a, b=b, c=c, z=z, phi=phi,
                   alpha_c=alpha_c, beta_c=beta_c, gamma_c=gamma_c, delta_c=delta_c,
                   alpha_h=alpha_h, beta_h=beta_h, gamma_h=beta_c / c, delta_h=gamma_c,
                   eta_h=-delta_c / c, sigma=np.asarray(moments.sigma),
                   vd2_coef=moments.vd2 * lam ** VD2_POWER[moments.convention])

    def cov_yd(self, s):
        """Closed form of E[Y(s) (Psi1 - Psi2 - Psi3)(s)]."""
        bb = self.b + self.c * s
        e = 1.0 / self.c
        return (self.alpha_h * bb + self.beta_h * bb ** (-e) + self.gamma_h * math.log(bb) / bb ** e
                + self.delta_h + self.eta_h * bb ** (-e - 1))

    def variance(self, t):
        lam, a, b, c = self.lam, self.a, self.b, self.c
        v2, v3 = self.vbar[1], self.vbar[2]
        lv3 = lam * v3
        e = 1.0 / c
        kk = self.z + a * b / (1 + c)
        bb = b + c * t
        sig = self.sigma
        u = sig[1] - sig[2] * a / ((1 + c) * lv3)
        vd = self.vd2_coef / 6.0
        s1 = np.sum(lam * u ** 2 + vd * (c / (1 + c) * v2) ** 2)
        s2 = np.sum(2 * (lam * u * sig[2] + vd * c / (1 + c) * v2 * v3))
        s3 = np.sum(lam * sig[2] ** 2 + vd * v3 ** 2)
        t1 = (bb ** (2 * e + 1) - b ** (2 * e + 1)) / ((2 + c) * bb ** (2 * e)) * s1
        t2 = b ** e / lv3 * (bb ** e - b ** e) / bb ** (2 * e) * kk * s2
        t3 = t / bb ** (2 * e + 1) * b ** (2 * e - 1) / lv3 ** 2 * s3 * kk ** 2
        ah, bh, gh, dh, eh = self.alpha_h, self.beta_h, self.gamma_h, self.delta_h, self.eta_h
        t4 = -2 * a / (bb ** (2 * e) * (1 + c) * lv3) * (
            ah * (bb ** (2 * e + 1) - b ** (2 * e + 1)) / (2 + c)
            + (bh - gh * c) * (bb ** e - b ** e)
            + gh * (bb ** e * math.log(bb) - b ** e * math.log(b))
            + dh / 2 * (bb ** (2 * e) - b ** (2 * e))
            + eh / (1 - c) * (bb ** (e - 1) - b ** (e - 1)))
        t5 = 2 / bb ** (2 * e) * kk * b ** e / lv3 * (
            ah * (bb ** e - b ** e)
            + (bh + gh) * t / (b * bb)
            + gh / c * (math.log(b) / b - math.log(bb) / bb)
            + dh / (1 - c) * (bb ** (e - 1) - b ** (e - 1))
            + eh / (2 * c) * (b ** -2 - bb ** -2))
        return t1 + t2 + t3 + t4 + t5


def fluctuation_covariance_yd(fluid: FluidParams, moments: FlowMoments, s):
    """E[Y(s) (Psi1 - Psi2 - Psi3)(s)] by quadrature."""
    psi = np.asarray(moments.psi)
    w = _Weights(fluid)
    p12 = psi[0, 1] - psi[1, 1] - psi[2, 1]
    p13 = psi[0, 2] - psi[1, 2] - psi[2, 2]
    phi = psi[0, 0] + psi[1, 1] + psi[2, 2] - 2 * psi[0, 1] - 2 * psi[0, 2] + 2 * psi[1, 2]
    return (-p12 * _quad(lambda u: w.decay(u, s), 0.0, s)
            - p13 * _quad(lambda u: w.decay(u, s) * w.ratio(u), 0.0, s)
            + phi * _quad(lambda u: w.decay(u, s) * w.drift(u) * u, 0.0, s))


def fluctuation_variance(fluid: FluidParams, moments: FlowMoments, t, mode="quadrature"):
    """Variance of the limiting order-position fluctuation Y(t).

    Parameters
    ----------
    fluid : FluidParams
    moments : FlowMoments
        Supplies the 6x6 flow covariance ``psi``.
    t : float
        Time in ``[0, tau_z)``.
    mode : {"quadrature", "isometry", "closed-form", "closed-form-corrected"}
        ``"quadrature"`` integrates the second-moment equation with nested
        adaptive quadrature and is the reference.  ``"isometry"`` writes Y(t)
        as a stochastic integral against the flows and applies the Ito
        isometry.  ``"closed-form"`` evaluates the explicit expression, which
        needs ``c < 0`` and ``c != -1``; ``"closed-form-corrected"`` is the same
        expression with the constant fixed by the initial condition (see
        :meth:`FluctuationConstants.build`).
    """
    t = float(t)
    _fluct_setup(fluid, t)
    if mode in ("closed-form", "closed-form-corrected"):
        variant = "corrected" if mode.endswith("corrected") else "published"
        consts = FluctuationConstants.build(fluid, moments, variant)
        return 0.0 if t == 0 else consts.variance(t)
    if t == 0:
        return 0.0
    psi = np.asarray(moments.psi)
    if mode == "quadrature":
        return _variance_quadrature(fluid, psi, t)
    if mode == "isometry":
        return _variance_isometry(fluid, psi, t)
    raise ValueError(f"unknown mode {mode!r}")


def fluctuation_variance_at_execution(fluid, moments, mode="quadrature", rel_gap=1e-9):
    """Left limit of the variance at ``tau_z``, evaluated just below it."""
    tau_z = fluid_hitting_times(fluid)[2]
    return fluctuation_variance(fluid, moments, tau_z * (1.0 - rel_gap), mode)


def execution_time_fluct_cdf(fluid: FluidParams, sigma_y, x):
    """Limit of P(sqrt(n) (tau_n^z - tau^z) >= x), equal to ``1 - Phi(a x / sigma_y)``."""
    a = fluid.a
    if not a > 0:
        raise ValueError("needs a > 0 (market orders at the bid)")
    return norm_sf(a * np.asarray(x, dtype=float) / sigma_y)[()]


def depletion_variance_rate(side, psi):
    """Variance per unit time of the net bid (or ask) flow fluctuation."""
    psi = np.asarray(psi)
    i = 0 if side == "bid" else 3
    j, k = i + 1, i + 2
    return psi[i, i] + psi[j, j] + psi[k, k] - 2 * psi[i, j] - 2 * psi[i, k] + 2 * psi[j, k]


def depletion_time_fluct_cdf(side, fluid: FluidParams, psi, x, form="published"):
    """Limiting tail P(sqrt(n) (tau_n - tau) >= x) of a queue depletion time.

    Parameters
    ----------
    side : {"bid", "ask"}
    form : {"published", "delta"}
        ``"published"`` returns ``1 - Phi(sqrt(q lam v / phi) x)``.
        ``"delta"`` applies the delta method to the linear fluid queue,
        giving ``1 - Phi(sqrt((lam v)^3 / (q phi)) x)``.
    """
    if side not in ("bid", "ask"):
        raise ValueError("side must be 'bid' or 'ask'")
    v = fluid.vb if side == "bid" else fluid.va
    q = fluid.qb if side == "bid" else fluid.qa
    if not v > 0:
        raise ValueError(f"the {side} queue does not deplete in the fluid limit (v = {v})")
    phi = depletion_variance_rate(side, psi)
    lv = fluid.lam * v
    if form == "published":
        scale = math.sqrt(q * lv / phi)
    elif form == "delta":
        scale = math.sqrt(lv ** 3 / (q * phi))
    else:
        raise ValueError(f"unknown form {form!r}")
    return (1.0 - norm_cdf(scale * np.asarray(x, dtype=float)))[()]
