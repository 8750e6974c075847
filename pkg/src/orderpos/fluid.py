"""Fluid-limit trajectories of the queues and the order position.

With mean mark vector ``vbar`` and arrival rate ``lam`` the bid and ask queues
decay linearly at rates ``lam*vb`` and ``lam*va`` where

    vb = -vbar[0] + vbar[1] + vbar[2],   va = -vbar[3] + vbar[4] + vbar[5].

The order position solves ``Z' = -lam*(vbar[1] + vbar[2] * Z/Q^b)``, a linear
ODE whose solution is written with ``a = lam*vbar[1]``, ``b = q^b/(lam*vbar[2])``
and ``c = -vb/vbar[2]``.  Everything is frozen at ``tau``, the first of the
three hitting times.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq

BRANCH_EPS = 1e-8
_INF = math.inf


class IntegrationError(RuntimeError):
    """ODE integration failed; carries the last valid state."""

    def __init__(self, message, t_last=None, state_last=None):
        super().__init__(message)
        self.t_last = t_last
        self.state_last = state_last


def _net(limit, market, cancel):
    # snap rounding residue to an exact zero so the balanced branches are reachable
    v = -limit + market + cancel
    return 0.0 if abs(v) <= 1e-14 * max(limit, market + cancel) else v


@dataclass(frozen=True)
class FluidParams:
    lam: float
    vbar: tuple
    qb: float
    qa: float
    z: float

    def __post_init__(self):
        v = tuple(float(x) for x in self.vbar)
        if len(v) != 6 or any(x < 0 for x in v):
            raise ValueError("vbar must be a nonnegative 6-vector")
        object.__setattr__(self, "vbar", v)
        if not (self.qb > 0 and self.qa > 0 and self.z > 0):
            raise ValueError("initial fluid states must be positive")
        if self.z > self.qb:
            raise ValueError("z must not exceed qb")
        if not self.lam > 0:
            raise ValueError("lam must be positive")

    @property
    def vb(self):
        return _net(self.vbar[0], self.vbar[1], self.vbar[2])

    @property
    def va(self):
        return _net(self.vbar[3], self.vbar[4], self.vbar[5])

    @property
    def a(self):
        return self.lam * self.vbar[1]

    @property
    def b(self):
        return self.qb / (self.lam * self.vbar[2]) if self.vbar[2] > 0 else _INF

    @property
    def c(self):
        return -self.vb / self.vbar[2] if self.vbar[2] > 0 else math.nan

    def summary(self):
        ta, tb, tz = fluid_hitting_times(self)
        return {"tau_a": ta, "tau_b": tb, "tau_z": tz, "a": self.a, "b": self.b, "c": self.c,
                "vb": self.vb, "va": self.va}


# --------------------------------------------------------------------------
# queues
# --------------------------------------------------------------------------

def _depletion_time(q, lam, v):
    return q / (lam * v) if v > 0 else _INF


def _queues_free(p, t):
    return p.qb - p.lam * p.vb * t, p.qa - p.lam * p.va * t


def fluid_queues(p, t):
    """(Q^b(t), Q^a(t)), frozen at tau."""
    t = np.minimum(np.asarray(t, dtype=float), fluid_tau(p))
    qb, qa = _queues_free(p, t)
    return qb, qa


# --------------------------------------------------------------------------
# order position
# --------------------------------------------------------------------------

def _z_free(p, t):
    """Closed-form Z(t) without freezing (valid before Q^b reaches 0)."""
    t = np.asarray(t, dtype=float)
    lam, v = p.lam, p.vbar
    z = p.z
    if v[2] == 0.0:
        return z - lam * v[1] * t
    a, b, c = p.a, p.b, p.c
    if abs(c) < BRANCH_EPS:
        return (z + a * b) * np.exp(-t / b) - a * b
    if abs(c + 1.0) < BRANCH_EPS:
        s = np.maximum(b - t, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = s * (a * np.log(s / b) + z / b)
        return np.where(s > 0, val, 0.0)
    u = b + c * t
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(u > 0, b / np.where(u > 0, u, 1.0), np.inf)
        val = -a / (1.0 + c) * u + (z + a * b / (1.0 + c)) * ratio ** (1.0 / c)
    return np.where(u > 0, val, 0.0)


def _tau_z_closed(p):
    a, b, c, z = p.a, p.b, p.c, p.z
    if abs(c) < BRANCH_EPS:
        return b * math.log(z / (a * b) + 1.0)
    if abs(c + 1.0) < BRANCH_EPS:
        return b * (1.0 - math.exp(-z / (a * b)))
    base = (1.0 + c) * z / a + b
    if base <= 0.0:
        return math.nan
    return base ** (c / (c + 1.0)) * b ** (1.0 / (c + 1.0)) / c - b / c


def _smallest_root(p, upper, grid=20001):
    """Smallest root of the closed-form Z on (0, upper] by grid scan + brentq."""
    hi = upper if math.isfinite(upper) else None
    if hi is None:
        hi = 1.0
        while _z_free(p, hi) > 0 and hi < 1e15:
            hi *= 2.0
        if _z_free(p, hi) > 0:
            return _INF
    ts = np.linspace(0.0, hi, grid)
    zs = _z_free(p, ts)
    bad = np.nonzero(zs[1:] <= 0.0)[0]
    if bad.size == 0:
        return upper
    k = bad[0] + 1
    if zs[k] == 0.0:
        return float(ts[k])
    return brentq(lambda s: float(_z_free(p, s)), ts[k - 1], ts[k], xtol=1e-14, rtol=1e-15)


def fluid_hitting_times(p):
    """(tau_a, tau_b, tau_z) of the fluid system (inf when never reached)."""
    tau_a = _depletion_time(p.qa, p.lam, p.va)
    tau_b = _depletion_time(p.qb, p.lam, p.vb)
    v = p.vbar
    if v[2] == 0.0:
        tau_z = p.z / (p.lam * v[1]) if v[1] > 0 else _INF
        return tau_a, tau_b, min(tau_z, tau_b)
    if p.a == 0.0:
        # without market orders Z is proportional to a power of Q^b
        return tau_a, tau_b, tau_b
    cand = _tau_z_closed(p)
    if math.isfinite(cand) and 0.0 < cand <= tau_b * (1.0 + 1e-12):
        # certify that it is the smallest positive root
        ts = np.linspace(0.0, cand, 10001)[1:-1]
        if np.all(_z_free(p, ts) > 0.0):
            return tau_a, tau_b, min(cand, tau_b)
    return tau_a, tau_b, _smallest_root(p, tau_b)


def fluid_tau(p):
    return min(fluid_hitting_times(p))


def fluid_position(p, t):
    """Z(t) from the closed form, frozen at tau."""
    t = np.minimum(np.asarray(t, dtype=float), fluid_tau(p))
    return _z_free(p, t)


@dataclass(frozen=True)
class FluidSolution:
    params: FluidParams
    tau_a: float
    tau_b: float
    tau_z: float

    @property
    def tau(self):
        return min(self.tau_a, self.tau_b, self.tau_z)

    def qb(self, t):
        return fluid_queues(self.params, t)[0]

    def qa(self, t):
        return fluid_queues(self.params, t)[1]

    def z(self, t):
        return fluid_position(self.params, t)


def solve_fluid(p):
    return FluidSolution(p, *fluid_hitting_times(p))


# --------------------------------------------------------------------------
# general cancellation profile
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneralFluid:
    """Numerical order-position path under a cancellation profile."""

    params: FluidParams
    tau_a: float
    tau_b: float
    tau_z: float
    sol: object

    @property
    def tau(self):
        return min(self.tau_a, self.tau_b, self.tau_z)

    def z(self, t):
        t = np.minimum(np.asarray(t, dtype=float), self.tau)
        return self.sol.sol(t)[0] if np.ndim(t) else float(self.sol.sol(float(t))[0])


def _bisect_event(f, lo, hi, tol=1e-10):
    flo = f(lo)
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return hi


def solve_fluid_general(p, rule, t_max=None, rtol=1e-12):
    """Integrate ``Z' = -lam*(vbar[1] + vbar[2]*U(Z/Q^b))`` with adaptive steps.

    The first time Z or Q^b reaches zero is located by bisection on the dense
    output to ``1e-10`` absolute.
    """
    lam, v = p.lam, p.vbar
    tau_a = _depletion_time(p.qa, lam, p.va)
    tau_b = _depletion_time(p.qb, lam, p.vb)
    horizon = min(tau_a, tau_b)
    if not math.isfinite(horizon):
        horizon = t_max if t_max is not None else 1e6
    if t_max is not None:
        horizon = min(horizon, t_max)

    def rhs(t, y):
        qb = p.qb - lam * p.vb * t
        ratio = min(max(y[0] / qb, 0.0), 1.0) if qb > 0 else 1.0
        return [-lam * (v[1] + v[2] * float(rule(ratio)))]

    def hit_zero(t, y):
        return y[0]

    hit_zero.terminal = True
    hit_zero.direction = -1
    sol = solve_ivp(rhs, (0.0, horizon), [p.z], method="DOP853", rtol=rtol,
                    atol=1e-3 * rtol * p.z, dense_output=True, events=hit_zero)
    if sol.status == -1:
        raise IntegrationError(sol.message, t_last=float(sol.t[-1]), state_last=float(sol.y[0, -1]))
    if sol.t_events[0].size:
        te = float(sol.t_events[0][0])
        lo = max(0.0, te - 1e-6 * max(1.0, te))
        tau_z = _bisect_event(lambda s: float(sol.sol(s)[0]), lo, min(te + 1e-6 * max(1.0, te), sol.t[-1]))
    else:
        tau_z = tau_b if sol.t[-1] >= tau_b * (1 - 1e-12) else _INF
    return GeneralFluid(p, tau_a, tau_b, min(tau_z, tau_b), sol)


def fluid_position_general(p, rule, t):
    """Z(t) under cancellation profile ``rule``, frozen at tau."""
    t_arr = np.asarray(t, dtype=float)
    return solve_fluid_general(p, rule, t_max=float(np.max(t_arr)) if t_arr.size else None).z(t_arr)


# --------------------------------------------------------------------------
# arrival rate affine in the queue sizes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearIntensityFluid:
    """Fluid system with arrival rate ``lam + alpha_q*Q^a + beta_q*Q^b``."""

    params: FluidParams
    alpha_q: float
    beta_q: float
    tau_a: float
    tau_b: float
    tau_z: float
    bid_depletes: bool
    ask_depletes: bool
    ode_fallback: bool

    @property
    def rate0(self):
        p = self.params
        return p.lam + self.alpha_q * p.qa + self.beta_q * p.qb

    @property
    def k(self):
        p = self.params
        return self.alpha_q * p.va + self.beta_q * p.vb

    @property
    def tau(self):
        return min(self.tau_a, self.tau_b, self.tau_z)

    def cumulative_rate(self, t):
        """int_0^t R(s) ds = R0 (1 - exp(-k t)) / k."""
        t = np.asarray(t, dtype=float)
        k = self.k
        if k == 0.0:
            return self.rate0 * t
        return -self.rate0 * np.expm1(-k * t) / k

    def queues(self, t):
        t = np.minimum(np.asarray(t, dtype=float), self.tau)
        p = self.params
        if self.ode_fallback:
            y = self._ode(t)
            return y[0], y[1]
        big_r = self.cumulative_rate(t)
        return p.qb - p.vb * big_r, p.qa - p.va * big_r

    def _log_growth(self, t):
        # int_0^t R vbar3 / Q^b = -(vbar3/vb) log(Q^b(t)/q^b)
        p = self.params
        big_r = self.cumulative_rate(t)
        x = -p.vb * big_r / p.qb
        if abs(x) < 1e-8:
            return p.vbar[2] * big_r / p.qb * (1.0 - 0.5 * x)
        return -(p.vbar[2] / p.vb) * math.log1p(x)

    def _inflow(self, t):
        # int_0^t R(s) vbar2 exp(int_0^s R vbar3/Q^b) ds by adaptive quadrature
        p = self.params
        if t <= 0.0 or p.vbar[1] == 0.0:
            return 0.0
        r0, k = self.rate0, self.k

        def f(s):
            return r0 * math.exp(-k * s + self._log_growth(s))

        val, _ = quad(f, 0.0, t, epsabs=1e-10 * p.z / max(p.vbar[1], 1e-300), epsrel=1e-13, limit=200)
        return p.vbar[1] * val

    def z_value(self, t):
        t = min(float(t), self.tau)
        p = self.params
        if self.ode_fallback:
            return float(self._ode(np.array([t]))[2][0])
        if t >= self.tau_b and self.tau_z >= self.tau_b:
            return 0.0
        return math.exp(-self._log_growth(t)) * (p.z - self._inflow(t))

    def z(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return self.z_value(float(t))
        return np.array([self.z_value(float(s)) for s in t])

    def _ode(self, t):
        return linear_intensity_ode(self.params, self.alpha_q, self.beta_q, np.atleast_1d(t))


def linear_intensity_ode(p, alpha_q, beta_q, t_eval, rtol=1e-12):
    """Direct ODE integration of (Q^b, Q^a, Z) under the affine arrival rate."""
    v = p.vbar
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))

    def rhs(t, y):
        qb, qa, z = y
        r = p.lam + alpha_q * qa + beta_q * qb
        ratio = z / qb if qb > 0 else 1.0
        return [-p.vb * r, -p.va * r, -r * (v[1] + v[2] * ratio)]

    t_end = float(np.max(t_eval)) if t_eval.size else 0.0
    if t_end <= 0.0:
        return np.tile([[p.qb], [p.qa], [p.z]], (1, t_eval.size))
    sol = solve_ivp(rhs, (0.0, t_end), [p.qb, p.qa, p.z], method="DOP853", rtol=rtol,
                    atol=rtol * max(p.qb, p.qa), dense_output=True)
    if sol.status == -1:
        raise IntegrationError(sol.message, t_last=float(sol.t[-1]), state_last=sol.y[:, -1])
    return sol.sol(t_eval)


def linear_band(p, alpha_q, beta_q):
    """Depletion conditions ``(bid_depletes, ask_depletes)`` of the affine-rate system."""
    cross = p.qa * p.vb - p.qb * p.va
    bid = p.vb > 0 and (alpha_q == 0.0 or cross > -p.lam * p.vb / alpha_q)
    ask = p.va > 0 and (beta_q == 0.0 or cross < p.lam * p.va / beta_q)
    return bid, ask


def _linear_depletion(q, v, r0, k):
    if v <= 0:
        return _INF
    if k == 0.0:
        return q / (v * r0)
    arg = q * k / (v * r0)
    if arg >= 1.0:
        return _INF
    return -math.log1p(-arg) / k


def fluid_linear_intensity(p, alpha_q, beta_q, t=None):
    """Fluid limit under arrival rate ``lam + alpha_q*Q^a + beta_q*Q^b``.

    Returns a :class:`LinearIntensityFluid`; if ``t`` is given, returns
    ``(Q^b(t), Q^a(t), Z(t), tau_a, tau_b, tau_z)`` instead.
    """
    if alpha_q < 0 or beta_q < 0:
        raise ValueError("coefficients must be nonnegative")
    r0 = p.lam + alpha_q * p.qa + beta_q * p.qb
    k = alpha_q * p.va + beta_q * p.vb
    bid, ask = linear_band(p, alpha_q, beta_q)
    ode = k == 0.0 and (alpha_q != 0.0 or beta_q != 0.0)
    tau_b = _linear_depletion(p.qb, p.vb, r0, k)
    tau_a = _linear_depletion(p.qa, p.va, r0, k)
    stub = LinearIntensityFluid(p, alpha_q, beta_q, tau_a, tau_b, _INF, bid, ask, ode)
    tau_z = _linear_tau_z(stub)
    sol = LinearIntensityFluid(p, alpha_q, beta_q, tau_a, tau_b, min(tau_z, tau_b), bid, ask, ode)
    if t is None:
        return sol
    qb, qa = sol.queues(t)
    return qb, qa, sol.z(t), sol.tau_a, sol.tau_b, sol.tau_z


def _linear_tau_z(s):
    p = s.params
    if p.vbar[1] == 0.0:
        return s.tau_b
    if s.ode_fallback:
        return _linear_tau_z_ode(p, s.alpha_q, s.beta_q, s.tau_b)

    def gap(t):
        return p.z - s._inflow(t)

    # the inflow is increasing, so the first sign change on a grid brackets the root
    if math.isfinite(s.tau_b):
        grid = s.tau_b * (1.0 - np.logspace(0, -9, 400))[1:]
        grid = np.concatenate((np.linspace(0.0, grid[0], 64)[1:], grid))
    else:
        grid = 2.0 ** np.arange(0, 41)
    lo = 0.0
    for t in grid:
        if gap(t) <= 0.0:
            return brentq(gap, lo, t, xtol=1e-13, rtol=1e-15)
        lo = t
    return s.tau_b


def _linear_tau_z_ode(p, alpha_q, beta_q, tau_b):
    v = p.vbar

    def rhs(t, y):
        qb, qa, z = y
        r = p.lam + alpha_q * qa + beta_q * qb
        return [-p.vb * r, -p.va * r, -r * (v[1] + v[2] * z / max(qb, 1e-300))]

    def hit(t, y):
        return y[2]

    hit.terminal = True
    hit.direction = -1
    end = tau_b if math.isfinite(tau_b) else 1e9
    sol = solve_ivp(rhs, (0.0, end), [p.qb, p.qa, p.z], method="DOP853", rtol=1e-12,
                    atol=1e-12 * p.qb, events=hit)
    return float(sol.t_events[0][0]) if sol.t_events[0].size else tau_b
