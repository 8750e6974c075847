"""Arrival-time streams for the order counting process N(t).

Four models are supported: homogeneous Poisson, linear Hawkes with an
exponential kernel, a Cox process driven by exponential shot noise, and an
intensity that is affine in the current bid/ask queue sizes.  For the first
three the long-run rate and the CLT variance constant are available in closed
form.
"""

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .kernels import active as _k
from .rng import stream_key, uniforms

SLOTS = 4


class UnsupportedSpecError(ValueError):
    """Raised when a quantity is not defined for the given arrival model."""


@dataclass(frozen=True)
class Poisson:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("Poisson rate must be positive")


@dataclass(frozen=True)
class HawkesExp:
    """Linear Hawkes process with intensity ``nu + sum a_h * exp(-b_h (t - t_i))``."""

    nu: float
    a_h: float
    b_h: float

    def __post_init__(self):
        if not self.nu > 0 or not self.b_h > 0 or self.a_h < 0:
            raise ValueError("Hawkes needs nu > 0, b_h > 0, a_h >= 0")
        if self.a_h / self.b_h >= 1.0:
            raise ValueError(f"supercritical Hawkes kernel: a_h/b_h = {self.a_h / self.b_h:g} >= 1")

    @property
    def kernel_norm(self):
        return self.a_h / self.b_h


@dataclass(frozen=True)
class CoxShotNoiseExp:
    """Cox process with intensity ``nu + sum_k kappa * exp(-delta_s (t - s_k))``.

    The shot times ``s_k`` form a Poisson process of rate ``rho_s``.
    """

    nu: float
    rho_s: float
    kappa: float
    delta_s: float

    def __post_init__(self):
        if not (self.nu > 0 and self.rho_s > 0 and self.delta_s > 0) or self.kappa < 0:
            raise ValueError("Cox needs nu, rho_s, delta_s > 0 and kappa >= 0")


@dataclass(frozen=True)
class LinearStateDependent:
    """Intensity ``lam + alpha_q * Q^a(t-) + beta_q * Q^b(t-)``."""

    lam: float
    alpha_q: float = 0.0
    beta_q: float = 0.0

    def __post_init__(self):
        if not self.lam > 0 or self.alpha_q < 0 or self.beta_q < 0:
            raise ValueError("linear intensity needs lam > 0 and nonnegative coefficients")


PointProcessSpec = Union[Poisson, HawkesExp, CoxShotNoiseExp, LinearStateDependent]


@dataclass(frozen=True)
class EventTimes:
    """Strictly increasing event times on ``[0, horizon]``."""

    times: np.ndarray
    horizon: float

    def count(self, t):
        """N(t), the number of events in ``[0, t]``."""
        return int(np.searchsorted(self.times, t, side="right"))

    def __len__(self):
        return int(self.times.shape[0])


# --------------------------------------------------------------------------
# limit constants
# --------------------------------------------------------------------------

def stationary_rate(spec):
    """Long-run event rate lambda = lim N(t)/t."""
    if isinstance(spec, Poisson):
        return float(spec.rate)
    if isinstance(spec, HawkesExp):
        return spec.nu / (1.0 - spec.kernel_norm)
    if isinstance(spec, CoxShotNoiseExp):
        return spec.nu + spec.rho_s * spec.kappa / spec.delta_s
    raise UnsupportedSpecError(f"no stationary rate for {type(spec).__name__}")


def clt_variance(spec):
    """Constant v_d^2 with (N(nt) - lambda n t)/sqrt(n) => v_d W."""
    if isinstance(spec, Poisson):
        return float(spec.rate)
    if isinstance(spec, HawkesExp):
        return spec.nu / (1.0 - spec.kernel_norm) ** 3
    if isinstance(spec, CoxShotNoiseExp):
        g1 = spec.kappa / spec.delta_s
        g2 = spec.kappa ** 2 / (2.0 * spec.delta_s)
        return spec.nu + spec.rho_s * g1 + spec.rho_s * g2
    raise UnsupportedSpecError(f"no CLT variance for {type(spec).__name__}")


def hawkes_burn_in(spec):
    """Length of the discarded warm-up window, 20 kernel time constants."""
    return 20.0 / spec.b_h


def cox_burn_in(spec):
    return 20.0 / spec.delta_s


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

def poisson_times(seed, stream, rate, horizon):
    """Poisson event times from the gap slot of each event's counter block.

    The same uniforms drive the gaps of the queue simulator, so a Poisson
    queue path and this stream share their clock for equal ``(seed, stream)``.
    """
    key = stream_key(seed, stream)
    chunks = []
    t0 = 0.0
    start = 0
    while True:
        m = max(1024, int(1.2 * rate * (horizon - t0)) + 64)
        idx = np.arange(start, start + m, dtype=np.uint64) * np.uint64(SLOTS)
        t = t0 + np.cumsum(-np.log(uniforms(key, idx)) / rate)
        if t[-1] > horizon:
            chunks.append(t[t <= horizon])
            break
        chunks.append(t)
        t0 = t[-1]
        start += m
    return np.concatenate(chunks)


def _run_with_retry(kernel, cap, *args):
    while True:
        out = np.empty(cap)
        count, overflow = kernel(*args, out)
        if not overflow:
            return out[:count].copy()
        cap *= 2


def _state_dependent_times(spec, horizon, seed, stream, state_callback):
    key = stream_key(seed, stream)
    times = []
    t = 0.0
    i = 0
    while True:
        qb, qa = state_callback(t, i)
        rate = spec.lam + spec.alpha_q * qa + spec.beta_q * qb
        t += -math.log(float(uniforms(key, np.array([SLOTS * i]))[0])) / rate
        if t > horizon:
            break
        times.append(t)
        i += 1
    return np.asarray(times)


def simulate_arrivals(spec, horizon, seed, state_callback: Optional[Callable] = None, stream=0):
    """Simulate event times on ``[0, horizon]``.

    Parameters
    ----------
    spec : PointProcessSpec
    horizon : float
        Positive time horizon.
    seed, stream : int
        Master seed and stream id of the counter-based generator.
    state_callback : callable, optional
        Required for :class:`LinearStateDependent`.  Called as
        ``state_callback(t, k)`` before every gap draw, where ``t`` is the time
        of the last event and ``k`` the number of events so far; it returns the
        queue sizes ``(Q^b, Q^a)`` holding since that event.

    Returns
    -------
    EventTimes
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    horizon = float(horizon)
    if isinstance(spec, Poisson):
        times = poisson_times(seed, stream, spec.rate, horizon)
    elif isinstance(spec, HawkesExp):
        lam = stationary_rate(spec)
        cap = int(lam * horizon + 10.0 * math.sqrt(clt_variance(spec) * horizon) + 256)
        times = _run_with_retry(_k.hawkes_times, cap, seed, stream, spec.nu, spec.a_h, spec.b_h,
                                horizon, hawkes_burn_in(spec))
    elif isinstance(spec, CoxShotNoiseExp):
        lam = stationary_rate(spec)
        cap = int(lam * horizon + 10.0 * math.sqrt(clt_variance(spec) * horizon) + 256)
        times = _run_with_retry(_k.cox_times, cap, seed, stream, spec.nu, spec.rho_s, spec.kappa,
                                spec.delta_s, horizon, cox_burn_in(spec))
    elif isinstance(spec, LinearStateDependent):
        if state_callback is None:
            raise ValueError("LinearStateDependent arrivals need a state_callback")
        times = _state_dependent_times(spec, horizon, seed, stream, state_callback)
    else:
        raise UnsupportedSpecError(f"unknown spec {spec!r}")
    return EventTimes(times=times, horizon=horizon)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def write_event_times(path, events):
    """Write one ``time`` column with 17 significant digits."""
    times = events.times if isinstance(events, EventTimes) else np.asarray(events)
    with open(path, "w", newline="") as fh:
        fh.write("time\n")
        for t in times:
            fh.write(f"{t:.17g}\n")


def read_event_times(path, horizon=None):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["time"]:
            raise ValueError(f"expected header 'time', got {header!r}")
        times = np.array([float(row[0]) for row in reader if row])
    if times.size and np.any(np.diff(times) <= 0):
        raise ValueError("event times must be strictly increasing")
    if horizon is None:
        horizon = float(times[-1]) if times.size else 0.0
    return EventTimes(times=times, horizon=float(horizon))
