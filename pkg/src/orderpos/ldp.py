"""Large-deviation rate functions for order flows and queue paths.

Rates are Legendre transforms ``sup_theta {theta.x - Gamma(theta)}`` of smooth
convex log-moment generating functions, computed by damped Newton.  Path rates
for piecewise-linear queue paths reduce, segment by segment, to a
six-dimensional convex program whose dual lives on the two queue multipliers.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .order_flow import Constant, LogNormal, MarkModel, mean_vector

A_MATRIX = np.array([[1.0, -1.0, -1.0, 0.0, 0.0, 0.0],
                     [0.0, 0.0, 0.0, 1.0, -1.0, -1.0]])

ARMIJO = 1e-4
NEWTON_CAP = 200
_THETA_DIVERGED = 1e15
FACE_FLOOR = 1e-24


class ConvergenceError(RuntimeError):
    def __init__(self, message, grad_norm, theta):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm
        self.theta = theta


# --------------------------------------------------------------------------
# log-mgf specifications
# --------------------------------------------------------------------------

class CompoundLogMgf:
    """Log-mgf of a six-type (or fewer) mark mixture.

    With ``lam=None`` this is ``log sum_j p_j M_j(theta_j)`` for one mark
    vector; with a rate it is the compound Poisson exponent
    ``lam (sum_j p_j M_j(theta_j) - 1)``.  A plain Poisson counting process is
    the one-type case with a unit constant size.
    """

    def __init__(self, p, laws, lam=None, missing=0.0):
        self.p = np.asarray(p, dtype=float)
        # probability of types removed by :meth:`restrict` (their mgf is sent to 0)
        self.missing = float(missing)
        self.laws = tuple(laws)
        self.lam = None if lam is None else float(lam)
        if self.p.shape != (len(self.laws),):
            raise ValueError("one law per type")
        self.dim = len(self.laws)
        self.theta_max = np.array([law.theta_max for law in self.laws], dtype=float)
        # lognormal sizes: the mgf is finite on the closed half line
        self.closed_bound = np.array([isinstance(law, LogNormal) for law in self.laws])

    @classmethod
    def poisson(cls, lam):
        return cls([1.0], [Constant(1.0)], lam)

    @classmethod
    def marks(cls, model: MarkModel, lam=None):
        return cls(model.p, model.laws, lam)

    def in_domain(self, th):
        th = np.asarray(th, dtype=float)
        ok = np.where(self.closed_bound, th <= self.theta_max, th < self.theta_max)
        return bool(np.all(ok | (self.p == 0)))

    def evaluate(self, th):
        """Return ``(Gamma, gradient, Hessian)``; Gamma is inf outside the domain."""
        th = np.asarray(th, dtype=float)
        d = self.dim
        if not self.in_domain(th):
            return math.inf, np.full(d, np.nan), np.full((d, d), np.nan)
        m0 = np.empty(d)
        m1 = np.empty(d)
        m2 = np.empty(d)
        for j, law in enumerate(self.laws):
            if self.p[j] == 0:
                m0[j] = m1[j] = m2[j] = 0.0
                continue
            if self.lam is None and isinstance(law, Constant):
                continue
            a, b, c = law.mgf(th[j])
            m0[j], m1[j], m2[j] = float(np.ravel(a)[0]), float(np.ravel(b)[0]), float(np.ravel(c)[0])
        if self.lam is None:
            # rescale by the largest constant-size exponent so log-sums do not overflow
            shift = max([th[j] * law.size for j, law in enumerate(self.laws)
                         if isinstance(law, Constant) and self.p[j] > 0], default=0.0)
            shift = max(shift, 0.0)
            for j, law in enumerate(self.laws):
                if self.p[j] == 0:
                    continue
                if isinstance(law, Constant):
                    e = math.exp(th[j] * law.size - shift)
                    m0[j], m1[j], m2[j] = e, law.size * e, law.size ** 2 * e
                else:
                    f = math.exp(-shift)
                    m0[j], m1[j], m2[j] = m0[j] * f, m1[j] * f, m2[j] * f
        else:
            shift = 0.0
        s = float(self.p @ m0)
        g = self.p * m1
        h = np.diag(self.p * m2)
        if self.lam is not None:
            # sum_j p_j (M_j - 1) keeps Gamma(0) = 0 exactly when p sums to 1 only up to rounding
            return self.lam * (float(self.p @ (m0 - 1.0)) - self.missing), self.lam * g, self.lam * h
        if s <= 0:
            return math.inf, np.full(d, np.nan), np.full((d, d), np.nan)
        g = g / s
        return math.log(s) + shift, g, h / s - np.outer(g, g)

    def value(self, th):
        return self.evaluate(th)[0]

    def mean(self):
        return self.evaluate(np.zeros(self.dim))[1]

    def restrict(self, keep):
        keep = np.asarray(keep, dtype=bool)
        return CompoundLogMgf(self.p[keep], [l for l, k in zip(self.laws, keep) if k], self.lam,
                              self.missing + float(self.p[~keep].sum()))

    def face_limit(self):
        """Gamma with every coordinate sent to -inf (all sizes positive)."""
        return -self.lam if self.lam is not None else -math.inf


class BlockEmpiricalLogMgf:
    """Empirical ``(1/L) log mean_k exp(theta . B_k)`` over block sums ``B_k`` of length ``L``."""

    def __init__(self, block_sums, block_len):
        self.b = np.atleast_2d(np.asarray(block_sums, dtype=float))
        if self.b.shape[0] == 1 and np.ndim(block_sums) == 1:
            self.b = self.b.T
        self.L = float(block_len)
        self.dim = self.b.shape[1]

    def evaluate(self, th):
        z = self.b @ np.asarray(th, dtype=float)
        zmax = z.max()
        w = np.exp(z - zmax)
        s = w.sum()
        w = w / s
        g = w @ self.b
        h = (self.b * w[:, None]).T @ self.b - np.outer(g, g)
        val = (zmax + math.log(s / len(z))) / self.L
        return val, g / self.L, h / self.L

    def value(self, th):
        return self.evaluate(th)[0]

    def mean(self):
        return self.evaluate(np.zeros(self.dim))[1]


class LinearImageLogMgf:
    """``Gamma(B^T eta)`` for a base spec and a matrix ``B``."""

    def __init__(self, base, matrix):
        self.base = base
        self.B = np.asarray(matrix, dtype=float)
        self.dim = self.B.shape[0]

    def evaluate(self, eta):
        th = self.B.T @ np.asarray(eta, dtype=float)
        v, g, h = self.base.evaluate(th)
        if not math.isfinite(v):
            return v, np.full(self.dim, np.nan), np.full((self.dim, self.dim), np.nan)
        return v, self.B @ g, self.B @ h @ self.B.T

    def value(self, eta):
        return self.evaluate(eta)[0]

    def mean(self):
        return self.evaluate(np.zeros(self.dim))[1]


def check_convexity(spec, points, rng=None, pairs=200, tol=1e-9):
    """Midpoint inequality on random pairs of ``points``; returns the worst violation."""
    rng = np.random.default_rng(0) if rng is None else rng
    pts = np.asarray(points, dtype=float)
    worst = 0.0
    for _ in range(pairs):
        i, j = rng.integers(len(pts), size=2)
        a, b = pts[i], pts[j]
        fa, fb, fm = spec.value(a), spec.value(b), spec.value(0.5 * (a + b))
        if math.isfinite(fa) and math.isfinite(fb):
            worst = max(worst, fm - 0.5 * (fa + fb))
    return worst


# --------------------------------------------------------------------------
# Legendre transform
# --------------------------------------------------------------------------

@dataclass
class LegendreResult:
    """Value of ``sup_theta {theta.x - Gamma(theta)}`` and how it was reached.

    ``status`` is one of ``"interior"`` (stationary point found),
    ``"boundary"`` (maximiser on the edge of the mgf domain, with
    ``certificate`` holding the outward one-sided derivatives),
    ``"face"`` (some coordinates of ``x`` vanish; those multipliers are at
    ``-inf``) or ``"infinite"`` (unbounded; ``certificate`` is a ray along
    which the objective grows).
    """

    value: float
    theta: np.ndarray
    status: str
    grad_norm: float = 0.0
    iterations: int = 0
    certificate: Optional[np.ndarray] = field(default=None, repr=False)


def _objective(spec, x, th):
    v = spec.value(th)
    return -math.inf if not math.isfinite(v) else float(th @ x) - v


def _ray_unbounded(spec, x, direction):
    d = direction / np.linalg.norm(direction)
    vals = [_objective(spec, x, s * d) for s in (1e2, 1e3, 1e4, 1e5)]
    return all(b > a + 1.0 for a, b in zip(vals, vals[1:]))


def _newton(spec, x, theta0=None, gtol=1e-12, cap=NEWTON_CAP):
    d = spec.dim
    th = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
    theta_max = getattr(spec, "theta_max", np.full(d, np.inf))
    closed = getattr(spec, "closed_bound", np.zeros(d, dtype=bool))
    scale = max(1.0, float(np.max(np.abs(x))))
    status = "interior"
    fixed = np.zeros(d, dtype=bool)
    for it in range(1, cap + 1):
        v, g, h = spec.evaluate(th)
        scale = max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(g))))
        grad = x - g
        at_bound = closed & (th >= theta_max) & (grad > 0)
        fixed = at_bound
        free_grad = np.where(fixed, 0.0, grad)
        gn = float(np.linalg.norm(free_grad))
        if gn == 0.0:
            status = "boundary" if fixed.any() else "interior"
            cert = grad[fixed] if fixed.any() else None
            return LegendreResult(float(th @ x) - v, th, status, gn, it, cert)
        free = ~fixed
        step = np.zeros(d)
        hf = h[np.ix_(free, free)]
        # Jacobi scaling, so a coordinate with small but genuine curvature is not taken as flat
        diag = np.sqrt(np.clip(np.diag(hf), 0.0, None))
        unit = np.where(diag > 0, diag, 1.0)
        w, vecs = np.linalg.eigh(hf / np.outer(unit, unit))
        flat = w <= 1e-13 * max(float(w.max()), 1e-300)
        gs = free_grad[free] / unit
        # objective linear along a flat direction with nonzero slope: test the ray
        for k in np.flatnonzero(flat):
            ray = np.zeros(d)
            direction = vecs[:, k] / unit
            ray[free] = direction * np.sign(vecs[:, k] @ gs)
            if abs(direction @ free_grad[free]) > gtol * scale and _ray_unbounded(spec, x, ray):
                return LegendreResult(math.inf, th, "infinite", gn, it, ray)
        inv = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, w))
        step[free] = (vecs @ (inv * (vecs.T @ gs))) / unit
        slope = float(free_grad @ step)
        f0 = float(th @ x) - v
        # rounding level of f0, which cancels two terms of size |theta.x| ~ |Gamma|
        noise = 4e-16 * max(1.0, abs(f0), abs(float(th @ x)), abs(v))
        # a small gradient is not enough for tiny velocities, where the multiplier is still far
        # from its limit; the Newton decrement bounds the remaining gain in the objective
        small = gn <= gtol * scale and slope <= 1e-20 * max(1.0, abs(f0))
        if 0 <= slope <= noise * 1e-8 or small:
            status = "boundary" if fixed.any() else "interior"
            return LegendreResult(f0, th, status, gn, it, grad[fixed] if fixed.any() else None)
        if not slope > 0:
            step = free_grad
            slope = float(free_grad @ free_grad)
        t = 1.0
        while True:
            cand = th + t * step
            # project onto closed domain edges
            cand = np.where(closed, np.minimum(cand, theta_max), cand)
            fc = _objective(spec, x, cand)
            # the slack absorbs rounding once the increase is below machine precision
            if fc >= f0 + ARMIJO * t * slope - noise:
                break
            t *= 0.5
            if t < 1e-30:
                if gn <= 1e-8 * scale:
                    return LegendreResult(f0, th, status, gn, it)
                raise ConvergenceError("line search failed", gn, th)
        th = cand
        if np.linalg.norm(th) > _THETA_DIVERGED:
            if _ray_unbounded(spec, x, th):
                return LegendreResult(math.inf, th, "infinite", gn, it, th / np.linalg.norm(th))
            raise ConvergenceError("multiplier diverged without an unbounded ray", gn, th)
    v, g, _ = spec.evaluate(th)
    gn = float(np.linalg.norm(x - g))
    if np.linalg.norm(th) > 1e3 and _ray_unbounded(spec, x, th):
        return LegendreResult(math.inf, th, "infinite", gn, cap, th / np.linalg.norm(th))
    raise ConvergenceError(f"Newton did not converge in {cap} steps", gn, th)


def legendre_point(spec, x, gtol=1e-12):
    """``sup_theta {theta.x - Gamma(theta)}`` by damped Newton.

    Parameters
    ----------
    spec : CompoundLogMgf, BlockEmpiricalLogMgf or LinearImageLogMgf
    x : array_like
        Point in the ambient space of ``Gamma``.

    Returns
    -------
    LegendreResult

    Notes
    -----
    For mark mixtures (all sizes positive) coordinates with ``x_j < 0`` give
    ``+inf`` directly, coordinates with ``x_j = 0`` are removed (their
    multipliers go to ``-inf``) and Newton runs on the rest.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.dim,):
        raise ValueError(f"x must have dimension {spec.dim}")
    if isinstance(spec, CompoundLogMgf):
        if np.any(x < 0):
            ray = -(x < 0).astype(float)
            return LegendreResult(math.inf, np.full(spec.dim, np.nan), "infinite", certificate=ray)
        dead = (spec.p == 0) & (x > 0)
        if dead.any():
            return LegendreResult(math.inf, np.full(spec.dim, np.nan), "infinite",
                                  certificate=dead.astype(float))
        # velocities below FACE_FLOOR sit on the face; the rate moves by O(sqrt(x_j)) <= 1e-12
        live = (x > FACE_FLOOR * max(1.0, float(np.max(x)))) & (spec.p > 0)
        if not live.all():
            theta = np.full(spec.dim, -np.inf)
            if not live.any():
                return LegendreResult(-spec.face_limit(), theta, "face")
            sub = spec.restrict(live)
            res = _newton(sub, x[live], gtol=gtol)
            theta[live] = res.theta
            status = res.status if res.status == "infinite" else "face"
            return LegendreResult(res.value, theta, status, res.grad_norm, res.iterations,
                                  res.certificate)
    return _newton(spec, x, gtol=gtol)


def poisson_rate(x, lam):
    """Closed-form Poisson rate ``x log(x/lam) - x + lam``."""
    if x < 0:
        return math.inf
    if x == 0:
        return float(lam)
    return x * math.log(x / lam) - x + lam


def poisson_iid_rate_density(marks: MarkModel, lam, x):
    """Rate density of the compound Poisson flow at velocity ``x`` (6-vector)."""
    return legendre_point(CompoundLogMgf.marks(marks, lam), x)


# --------------------------------------------------------------------------
# queue paths
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PiecewiseLinearPath:
    """Queue path through ``(times[k], fb[k], fa[k])`` with linear pieces."""

    times: np.ndarray
    fb: np.ndarray
    fa: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        fb = np.asarray(self.fb, dtype=float)
        fa = np.asarray(self.fa, dtype=float)
        if t.ndim != 1 or t.size < 2 or fb.shape != t.shape or fa.shape != t.shape:
            raise ValueError("need matching 1-D breakpoints and values with at least two points")
        if t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if not (np.all(np.isfinite(fb)) and np.all(np.isfinite(fa))):
            raise ValueError("path values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "fb", fb)
        object.__setattr__(self, "fa", fa)

    @classmethod
    def from_slopes(cls, q0, durations, slopes):
        durations = np.asarray(durations, dtype=float)
        slopes = np.asarray(slopes, dtype=float).reshape(-1, 2)
        t = np.concatenate([[0.0], np.cumsum(durations)])
        fb = q0[0] + np.concatenate([[0.0], np.cumsum(durations * slopes[:, 0])])
        fa = q0[1] + np.concatenate([[0.0], np.cumsum(durations * slopes[:, 1])])
        return cls(t, fb, fa)

    @property
    def initial(self):
        return float(self.fb[0]), float(self.fa[0])

    @property
    def durations(self):
        return np.diff(self.times)

    @property
    def slopes(self):
        d = self.durations
        return np.column_stack([np.diff(self.fb) / d, np.diff(self.fa) / d])


@dataclass
class SegmentRate:
    value: float
    eta: np.ndarray
    velocity: np.ndarray
    primal: float
    duality_gap: float
    status: str
    certificate: Optional[np.ndarray] = field(default=None, repr=False)


def _infeasibility_ray(p, slope):
    """Dual ray for slopes that no nonnegative flow of the live types can produce."""
    live = np.asarray(p) > 0
    for side, (inc, dec) in enumerate(((0, (1, 2)), (3, (4, 5)))):
        s = slope[side]
        eta = np.zeros(2)
        if s > 0 and not live[inc]:
            eta[side] = 1.0
            return eta
        if s < 0 and not (live[dec[0]] or live[dec[1]]):
            eta[side] = -1.0
            return eta
    return None


def segment_rate(marks: MarkModel, lam, slope, gtol=1e-12):
    """``min {Lambda(v) : v >= 0, A v = slope}`` for the compound Poisson flow.

    Solved through the dual ``sup_eta {eta.slope - Gamma(A^T eta)}``.  The
    primal candidate ``v = grad Gamma(A^T eta*)`` is re-evaluated with an
    independent six-dimensional Legendre transform to report the gap.
    """
    slope = np.asarray(slope, dtype=float)
    base = CompoundLogMgf.marks(marks, lam)
    ray = _infeasibility_ray(marks.p, slope)
    if ray is not None:
        return SegmentRate(math.inf, np.full(2, np.nan), np.full(6, np.nan), math.inf, 0.0,
                           "infeasible", ray)
    dual = _newton(LinearImageLogMgf(base, A_MATRIX), slope, gtol=gtol)
    if dual.status == "infinite":
        return SegmentRate(math.inf, dual.theta, np.full(6, np.nan), math.inf, 0.0, "infeasible",
                           dual.certificate)
    theta = A_MATRIX.T @ dual.theta
    velocity = base.evaluate(theta)[1]
    primal = legendre_point(base, velocity, gtol=gtol).value
    return SegmentRate(dual.value, dual.theta, velocity, primal, primal - dual.value, dual.status)


def queue_path_rate(path: PiecewiseLinearPath, marks: MarkModel, lam, detail=False):
    """Rate ``I(f^b, f^a)`` of a piecewise-linear queue path (compound Poisson flows)."""
    segments = [segment_rate(marks, lam, s) for s in path.slopes]
    total = float(np.sum([d * s.value for d, s in zip(path.durations, segments)]))
    return (total, segments) if detail else total


@dataclass
class TailExponent:
    t: float
    exponent: float
    path: Optional[PiecewiseLinearPath]
    rate: float


def _straight_line_rate(marks, lam, q0, t):
    qb, qa = q0

    def fun(s):
        seg = segment_rate(marks, lam, s)
        return t * seg.value, t * seg.eta

    fluid = lam * (A_MATRIX @ mean_vector(marks))
    lower = np.array([-qb / t, -qa / t])
    if np.all(fluid >= lower):
        return 0.0, fluid
    start = np.maximum(fluid, lower)
    res = minimize(fun, start, jac=True, method="L-BFGS-B",
                   bounds=[(lower[0], None), (lower[1], None)],
                   options={"ftol": 1e-15, "gtol": 1e-11, "maxiter": 500})
    return float(res.fun), res.x


def tau_tail_exponent(marks: MarkModel, lam, q0, t, family: Optional[Callable] = None,
                      candidates: Sequence = ()):
    """``lim (1/n) log P(tau_n >= t)`` as minus the cheapest path keeping both queues positive.

    Without a ``family`` the search runs over straight lines from ``q0`` that
    end at or above zero at time ``t``; by convexity of the rate density no
    other path with the same endpoint is cheaper.  A user family is a callable
    mapping each element of ``candidates`` to a :class:`PiecewiseLinearPath`;
    paths that touch zero before ``t`` are skipped.
    """
    if family is None:
        rate, slope = _straight_line_rate(marks, lam, q0, t)
        path = PiecewiseLinearPath.from_slopes(q0, [t], [slope])
        return TailExponent(t, -rate if rate > 0 else 0.0, path, rate)
    best, best_path = math.inf, None
    for c in candidates:
        pth = family(c)
        if np.any(pth.fb[:-1] <= 0) or np.any(pth.fa[:-1] <= 0) or pth.fb[-1] < 0 or pth.fa[-1] < 0:
            continue
        if abs(pth.times[-1] - t) > 1e-12 * max(1.0, t):
            raise ValueError("family paths must end at t")
        r = queue_path_rate(pth, marks, lam)
        if r < best:
            best, best_path = r, pth
    return TailExponent(t, -best, best_path, best)
